"""Radar measurement model: noisy generation, deterministic h(s) and Jacobians.

Channels are (range, azimuth, elevation, radial speed) in that fixed order,
restricted per sensing mode. Range noise grows with the square of distance and
shrinks with the square root of the target radar cross section,

    sigma_r(d) = sigma0r * d^2 / sqrt(rcs),

with sigma0r the error at the 1 m reference distance for a 1 m^2 target.
Bearing and Doppler noise are distance- and RCS-independent. Radial speed is
positive when the target recedes from the sensor.

The geometry kernels are written batched over sensor positions (shape (C, ...))
because the path planner evaluates the same state against many candidate
sensor locations per step; the public single-sensor operations are thin
wrappers over the batch kernels so both paths produce bitwise-identical
numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import UavPose, TargetState, Obstacle, line_of_sight, wrap_angle

__all__ = [
    "SensingMode",
    "SensorParams",
    "Measurement",
    "SingularityError",
    "CHANNELS",
    "GIMBAL_MARGIN",
    "range_std",
    "predict_measurement",
    "measurement_jacobian",
    "measure",
    "measurement_vector",
    "noise_variances",
]

CHANNELS = ("range", "azimuth", "elevation", "radial_speed")
GIMBAL_MARGIN = 1e-6  # rad; reject geometries this close to straight up/down
_COINCIDENT_EPS = 1e-9  # m


class SingularityError(ValueError):
    """Degenerate geometry: coincident positions or near-vertical boresight."""


@dataclass(frozen=True)
class SensingMode:
    """Which radar channels the network extracts from the backscatter."""

    range: bool = True
    bearing: bool = False
    doppler: bool = False

    def __post_init__(self):
        if not (self.range or self.bearing or self.doppler):
            raise ValueError("sensing mode must enable at least one channel")

    def channel_indices(self) -> tuple[int, ...]:
        """Indices into CHANNELS, in emission order."""
        idx = []
        if self.range:
            idx.append(0)
        if self.bearing:
            idx.extend((1, 2))
        if self.doppler:
            idx.append(3)
        return tuple(idx)

    @property
    def label(self) -> str:
        parts = []
        if self.range:
            parts.append("ranging")
        if self.bearing:
            parts.append("bearing")
        if self.doppler:
            parts.append("doppler")
        return "+".join(parts)


@dataclass(frozen=True)
class SensorParams:
    sigma0r: float = 0.001  # m at the 1 m reference distance, rcs 1 m^2
    sigma_bearing: float = math.radians(10.0)  # rad, azimuth and elevation alike
    sigma_doppler: float = 0.1  # m/s
    rcs: float = 0.1  # m^2

    def __post_init__(self):
        for name in ("sigma0r", "sigma_bearing", "sigma_doppler", "rcs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"SensorParams.{name} must be strictly positive")


@dataclass(frozen=True)
class Measurement:
    """One radar observation, stamped with its origin pose and hop age."""

    origin_id: int
    origin_pose: np.ndarray  # (3,) UAV position the echo was collected from
    step: int
    hop_age: int = 0
    range: float | None = None
    azimuth: float | None = None
    elevation: float | None = None
    radial_speed: float | None = None


def range_std(d: float, params: SensorParams) -> float:
    """Ranging standard deviation at distance d: sigma0r * d^2 / sqrt(rcs)."""
    if d <= 0:
        raise ValueError(f"range_std needs d > 0, got {d}")
    return params.sigma0r * d * d / math.sqrt(params.rcs)


def _geometry_batch(sensor_pos: np.ndarray, mean: np.ndarray):
    """Shared per-candidate geometry: delta, distance, horizontal range.

    sensor_pos is (C, 3); mean is the 6-state (position, velocity). Only
    elementwise operations, so each row's bits are independent of the batch
    size; the planner relies on that to reproduce scalar evaluations exactly.
    """
    delta = mean[:3][None, :] - sensor_pos  # (C, 3) sensor -> target
    d = np.sqrt(delta[:, 0] ** 2 + delta[:, 1] ** 2 + delta[:, 2] ** 2)
    rho = np.hypot(delta[:, 0], delta[:, 1])  # (C,)
    return delta, d, rho


def h_batch(sensor_pos: np.ndarray, mean: np.ndarray) -> np.ndarray:
    """All four channels of h(s) for each sensor position; shape (C, 4)."""
    delta, d, rho = _geometry_batch(sensor_pos, mean)
    vel = mean[3:]
    with np.errstate(invalid="ignore", divide="ignore"):
        az = np.arctan2(delta[:, 1], delta[:, 0])
        el = np.arctan2(delta[:, 2], rho)
        radial = (delta[:, 0] * vel[0] + delta[:, 1] * vel[1]
                  + delta[:, 2] * vel[2])
        rr = radial / d
    return np.stack([d, az, el, rr], axis=1)


def jacobian_batch(sensor_pos: np.ndarray, mean: np.ndarray) -> np.ndarray:
    """d h / d s for all four channels; shape (C, 4, 6).

    Columns are (px, py, pz, vx, vy, vz). Callers must mask out rows for
    disabled channels and guard degenerate geometries themselves; entries
    are inf/nan there.
    """
    delta, d, rho = _geometry_batch(sensor_pos, mean)
    vel = mean[3:]
    c = sensor_pos.shape[0]
    J = np.zeros((c, 4, 6))
    with np.errstate(invalid="ignore", divide="ignore"):
        u = delta / d[:, None]  # unit line of sight
        J[:, 0, 0:3] = u
        rho2 = rho * rho
        J[:, 1, 0] = -delta[:, 1] / rho2
        J[:, 1, 1] = delta[:, 0] / rho2
        d2 = d * d
        J[:, 2, 0] = -delta[:, 0] * delta[:, 2] / (d2 * rho)
        J[:, 2, 1] = -delta[:, 1] * delta[:, 2] / (d2 * rho)
        J[:, 2, 2] = rho / d2
        radial = (delta[:, 0] * vel[0] + delta[:, 1] * vel[1]
                  + delta[:, 2] * vel[2])
        rr = radial / d
        J[:, 3, 0:3] = (vel[None, :] - rr[:, None] * u) / d[:, None]
        J[:, 3, 3:6] = u
    return J


def _check_geometry(d: float, rho: float) -> None:
    if d < _COINCIDENT_EPS:
        raise SingularityError("sensor and target positions coincide")
    # |elevation| within GIMBAL_MARGIN of pi/2 <=> rho/d < sin(GIMBAL_MARGIN)
    if rho < d * math.sin(GIMBAL_MARGIN):
        raise SingularityError("boresight within gimbal margin of vertical")


def predict_measurement(target_mean: np.ndarray, sensor_pos: np.ndarray,
                        mode: SensingMode) -> np.ndarray:
    """Noise-free h(s) for the enabled channels, in channel order."""
    target_mean = np.asarray(target_mean, dtype=float)
    sensor_pos = np.asarray(sensor_pos, dtype=float)
    delta = target_mean[:3] - sensor_pos
    d = float(np.linalg.norm(delta))
    if d < _COINCIDENT_EPS:
        raise SingularityError("sensor and target positions coincide")
    full = h_batch(sensor_pos[None, :], target_mean)[0]
    return full[list(mode.channel_indices())]


def measurement_jacobian(target_mean: np.ndarray, sensor_pos: np.ndarray,
                         mode: SensingMode) -> np.ndarray:
    """Analytic Jacobian of the enabled channels at the given state.

    Rows follow channel order (range, azimuth, elevation, radial speed
    restricted to the mode); columns are (px, py, pz, vx, vy, vz).
    """
    target_mean = np.asarray(target_mean, dtype=float)
    sensor_pos = np.asarray(sensor_pos, dtype=float)
    delta = target_mean[:3] - sensor_pos
    d = float(np.linalg.norm(delta))
    rho = float(np.hypot(delta[0], delta[1]))
    _check_geometry(d, rho)
    full = jacobian_batch(sensor_pos[None, :], target_mean)[0]
    return full[list(mode.channel_indices()), :]


def noise_variances(d: float, mode: SensingMode, params: SensorParams) -> np.ndarray:
    """Per-channel noise variances at distance d, in channel order."""
    out = []
    if mode.range:
        out.append(range_std(d, params) ** 2)
    if mode.bearing:
        s2 = params.sigma_bearing ** 2
        out.extend((s2, s2))
    if mode.doppler:
        out.append(params.sigma_doppler ** 2)
    return np.array(out)


def measure(uav: UavPose, truth: TargetState, mode: SensingMode,
            params: SensorParams, obstacles: list[Obstacle],
            rng: np.random.Generator, step: int = 0) -> Measurement | None:
    """Generate one noisy measurement, or None under NLOS.

    Four standard normals are always drawn in fixed channel order, whatever
    the mode, so paired experiments that share the rng stream see common
    random numbers across sensing configurations.
    """
    if not line_of_sight(uav.position, truth.position, obstacles):
        return None
    state = truth.state_vector()
    h = h_batch(uav.position[None, :], state)[0]
    d = float(h[0])
    if d < _COINCIDENT_EPS:
        return None  # target sitting on the sensor: no usable echo
    draws = rng.standard_normal(4)
    values: dict[str, float] = {}
    if mode.range:
        # Physical ranges are positive; the floor only binds when the noise
        # momentarily exceeds the distance itself.
        values["range"] = max(d + range_std(d, params) * draws[0], 1e-2)
    if mode.bearing:
        values["azimuth"] = wrap_angle(h[1] + params.sigma_bearing * draws[1])
        el = h[2] + params.sigma_bearing * draws[2]
        values["elevation"] = float(np.clip(el, -math.pi / 2, math.pi / 2))
    if mode.doppler:
        values["radial_speed"] = float(h[3] + params.sigma_doppler * draws[3])
    return Measurement(origin_id=uav.id, origin_pose=uav.position.copy(),
                       step=step, hop_age=0, **values)


def measurement_vector(m: Measurement, mode: SensingMode) -> np.ndarray:
    """Stack the measurement's enabled channels in channel order."""
    vals = []
    if mode.range:
        vals.append(m.range)
    if mode.bearing:
        vals.extend((m.azimuth, m.elevation))
    if mode.doppler:
        vals.append(m.radial_speed)
    if any(v is None for v in vals):
        raise ValueError(
            f"measurement from uav {m.origin_id} lacks channels for mode {mode.label}")
    return np.array(vals, dtype=float)
