"""Physical ground truth: obstacles, occlusion, target motion, UAV kinematics.

Everything here is deterministic given a seeded ``numpy.random.Generator``.
Positions are meters in a fixed East-North-Up frame, velocities in m/s, and
the simulation advances on a discrete clock of ``dt`` seconds per step.

The target moves as a constant-speed random walk: its heading receives a
Gaussian increment each step while the speed stays exactly at the configured
value and the altitude stays fixed (planar motion). Obstacles are axis-aligned
boxes; a sensor has line of sight to the target iff the open segment between
them misses every box interior, so grazing a face still counts as visible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "ConfigurationError",
    "ConstraintViolation",
    "KinematicConstraints",
    "Obstacle",
    "SimClock",
    "TargetState",
    "UavPose",
    "World",
    "apply_control",
    "init_scenario",
    "line_of_sight",
    "sample_in_ball",
    "step_target",
    "wrap_angle",
]

TWO_PI = 2.0 * math.pi


class ConfigurationError(ValueError):
    """Raised for invalid scenario configuration (zero UAVs, bad obstacle, ...)."""


class ConstraintViolation(ValueError):
    """A control displacement violated the UAV kinematic constraints.

    The planner only emits feasible displacements, so seeing this error
    indicates a bug in the control module, not a recoverable condition.
    """


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (a + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class TargetState:
    """True kinematic state of the target."""

    position: np.ndarray  # (3,) m
    velocity: np.ndarray  # (3,) m/s
    heading: float  # rad, in [-pi, pi)

    def state_vector(self) -> np.ndarray:
        """Stacked (px, py, pz, vx, vy, vz)."""
        return np.concatenate([self.position, self.velocity])


@dataclass(frozen=True)
class UavPose:
    id: int
    position: np.ndarray  # (3,) m
    altitude_locked: bool = True


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned box, used as occlusion geometry (buildings)."""

    min_corner: np.ndarray  # (3,)
    max_corner: np.ndarray  # (3,)

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=float)
        hi = np.asarray(self.max_corner, dtype=float)
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ConfigurationError("obstacle corners must be finite")
        if np.any(hi <= lo):
            raise ConfigurationError(
                f"degenerate obstacle: min_corner {lo.tolist()} must be strictly "
                f"below max_corner {hi.tolist()} on every axis"
            )


@dataclass
class SimClock:
    """Discrete simulation clock; k increases by one per loop iteration."""

    k: int = 0
    dt: float = 1.0

    def tick(self) -> None:
        self.k += 1


@dataclass(frozen=True)
class KinematicConstraints:
    """UAV kinematic and anti-collision limits used by planning and actuation."""

    v_max: float = 10.0  # m/s
    max_turn_rate: float = math.pi / 2  # rad/s
    safety_distance_target: float = 50.0  # m, kept from the estimated target
    min_uav_separation: float = 10.0  # m
    altitude_locked: bool = True

    def __post_init__(self):
        if self.v_max <= 0 or self.max_turn_rate < 0:
            raise ConfigurationError("v_max must be > 0 and max_turn_rate >= 0")
        if self.safety_distance_target <= 0 or self.min_uav_separation <= 0:
            raise ConfigurationError("safety and separation distances must be > 0")


@dataclass
class World:
    """Snapshot of the physical state at one clock step."""

    clock: SimClock
    target: TargetState
    uavs: list[UavPose]
    obstacles: list[Obstacle]
    target_speed: float
    sigma_heading: float  # rad / sqrt(s), heading random-walk intensity

    def uav_positions(self) -> np.ndarray:
        return np.array([u.position for u in self.uavs])


def sample_in_ball(center: np.ndarray, radius: float, rng: np.random.Generator,
                   min_z: float = -np.inf) -> np.ndarray:
    """Uniform sample inside a ball, rejecting points below ``min_z``."""
    center = np.asarray(center, dtype=float)
    if radius == 0.0:
        return center.copy()
    while True:
        # Direction from an isotropic Gaussian, radius via inverse-CDF r = R*u^(1/3).
        direction = rng.standard_normal(3)
        norm = np.linalg.norm(direction)
        if norm < 1e-12:
            continue
        r = radius * rng.uniform() ** (1.0 / 3.0)
        p = center + direction * (r / norm)
        if p[2] >= min_z:
            return p


def init_scenario(config, seed: int) -> World:
    """Build the initial world from a scenario config.

    UAVs are spawned uniformly inside a sphere of the configured radius around
    the configured center (30 m around a point at 50 m height by default),
    rejecting draws below the minimum altitude. Fixed fleets take their
    positions verbatim from the config instead. Identical (config, seed)
    pairs produce identical worlds.
    """
    w = config.world
    fleet = config.fleet
    if fleet.n < 1:
        raise ConfigurationError("fleet.n must be >= 1")
    obstacles = [Obstacle(np.asarray(lo, float), np.asarray(hi, float))
                 for lo, hi in w.obstacles]

    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    locked = not w.free_altitude
    if fleet.kind == "fixed":
        if len(fleet.fixed_positions) != fleet.n:
            raise ConfigurationError(
                f"fleet.fixed_positions has {len(fleet.fixed_positions)} entries "
                f"for n={fleet.n}")
        uavs = [UavPose(i, np.asarray(p, dtype=float), altitude_locked=True)
                for i, p in enumerate(fleet.fixed_positions)]
    else:
        center = np.asarray(w.uav_init_center, dtype=float)
        uavs = [UavPose(i, sample_in_ball(center, w.uav_init_radius, rng,
                                          min_z=w.uav_min_altitude),
                        altitude_locked=locked)
                for i in range(fleet.n)]

    heading = wrap_angle(w.target_heading)
    velocity = w.target_speed * np.array(
        [math.cos(heading), math.sin(heading), 0.0])
    target = TargetState(np.asarray(w.target_start, dtype=float), velocity, heading)
    return World(
        clock=SimClock(0, w.dt),
        target=target,
        uavs=uavs,
        obstacles=obstacles,
        target_speed=w.target_speed,
        sigma_heading=w.sigma_heading,
    )


def _segment_hits_box(a: np.ndarray, b: np.ndarray, box: Obstacle) -> bool:
    # Slab test for the open segment against the open box interior. The
    # intersection must have positive extent, so boundary grazing is a miss.
    d = b - a
    t0, t1 = 0.0, 1.0
    for ax in range(3):
        lo = box.min_corner[ax]
        hi = box.max_corner[ax]
        if d[ax] == 0.0:
            if a[ax] <= lo or a[ax] >= hi:
                return False
        else:
            ta = (lo - a[ax]) / d[ax]
            tb = (hi - a[ax]) / d[ax]
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
            if t0 >= t1:
                return False
    return t1 > t0


def line_of_sight(a: np.ndarray, b: np.ndarray, obstacles: list[Obstacle]) -> bool:
    """True iff the open segment (a, b) intersects no obstacle interior."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for box in obstacles:
        if _segment_hits_box(a, b, box):
            return False
    return True


def step_target(state: TargetState, clock: SimClock, rng: np.random.Generator,
                sigma_heading: float = 0.0, speed: float | None = None) -> TargetState:
    """Advance the target one step of its constant-speed heading random walk.

    heading' = heading + N(0, sigma_heading^2 * dt), then the velocity is
    rebuilt at the configured speed so |velocity| is preserved exactly and the
    motion stays planar (z component untouched).
    """
    if speed is None:
        speed = float(np.linalg.norm(state.velocity))
    dt = clock.dt
    heading = state.heading
    if sigma_heading > 0.0:
        heading += sigma_heading * math.sqrt(dt) * rng.standard_normal()
    heading = wrap_angle(heading)
    velocity = speed * np.array([math.cos(heading), math.sin(heading), 0.0])
    position = state.position + velocity * dt
    return TargetState(position, velocity, heading)


def apply_control(pose: UavPose, u: np.ndarray, constraints: KinematicConstraints,
                  dt: float = 1.0) -> UavPose:
    """Apply a planner displacement to a UAV pose.

    The displacement must respect the altitude lock and |u| <= v_max * dt
    (boundary inclusive, with a small relative tolerance for float round-off).
    Violations raise ConstraintViolation: the planner's candidate set is
    feasible by construction, so a violation is a control-module bug.
    """
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ConstraintViolation(f"non-finite control for uav {pose.id}: {u}")
    if pose.altitude_locked and u[2] != 0.0:
        raise ConstraintViolation(
            f"uav {pose.id} is altitude-locked but control has u.z={u[2]}")
    limit = constraints.v_max * dt
    step = float(np.linalg.norm(u))
    if step > limit * (1.0 + 1e-9):
        raise ConstraintViolation(
            f"uav {pose.id} displacement {step:.6f} m exceeds v_max*dt={limit:.6f} m")
    return replace(pose, position=pose.position + u)
