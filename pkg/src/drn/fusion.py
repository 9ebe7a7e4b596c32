"""Per-UAV Bayesian filtering over heterogeneous, hop-aged radar measurements.

The filter state is (px, py, pz, vx, vy, vz) with a Gaussian belief. Motion
follows a nearly-constant-velocity model with continuous white-acceleration
noise of intensity q, a deliberate mismatch to the true constant-speed
heading random walk. Updates run sequentially, one measurement at a time in
ascending (hop_age, origin_id) order, re-linearizing at the current mean, with
per-channel noise evaluated at the predicted range and inflated by
(1 + hop_age * dt * q_age) for information that aged while hopping through
the network. Covariances are propagated in Joseph form and symmetrized.

``kalman_update`` is the bare linear-algebra kernel: tests exercise it with
linear observation models where the exact Kalman filter is available in
closed form.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from . import sensing
from .sensing import Measurement, SensingMode, SensorParams
from .world import TargetState, wrap_angle

__all__ = [
    "Belief",
    "MotionModel",
    "PriorConfig",
    "InitializationError",
    "init_belief",
    "predict",
    "update",
    "estimate",
    "nees",
    "kalman_update",
    "transition",
]

log = logging.getLogger(__name__)

STATE_DIM = 6


class InitializationError(ValueError):
    """No measurements and no prior region to start a track from."""


@dataclass(frozen=True)
class Belief:
    """Gaussian posterior (mean, covariance) of the target state at step k."""

    mean: np.ndarray  # (6,)
    covariance: np.ndarray  # (6, 6)
    step: int = 0


@dataclass(frozen=True)
class MotionModel:
    """Nearly-constant-velocity model with white-acceleration intensity q."""

    q: float = 0.5  # m^2/s^3

    def __post_init__(self):
        # q = 0 gives a purely deterministic drift, useful in tests; scenario
        # configs require q > 0.
        if self.q < 0:
            raise ValueError("process noise intensity q must be >= 0")


@dataclass(frozen=True)
class PriorConfig:
    """Diagonal Gaussian prior used at track initialization."""

    center: np.ndarray | None = None  # (3,) fallback position when needed
    position_sigma: float = 20.0
    velocity_sigma: float = 2.0


def transition(dt: float, q: float) -> tuple[np.ndarray, np.ndarray]:
    """Constant-velocity transition F and white-acceleration noise Q."""
    F = np.eye(STATE_DIM)
    F[0, 3] = F[1, 4] = F[2, 5] = dt
    i3 = np.eye(3)
    Q = np.block([
        [dt ** 3 / 3.0 * i3, dt ** 2 / 2.0 * i3],
        [dt ** 2 / 2.0 * i3, dt * i3],
    ]) * q
    return F, Q


def predict(belief: Belief, dt: float, model: MotionModel) -> Belief:
    """Propagate the belief one step through the motion model."""
    F, Q = transition(dt, model.q)
    mean = F @ belief.mean
    cov = F @ belief.covariance @ F.T + Q
    cov = 0.5 * (cov + cov.T)
    return Belief(mean, cov, belief.step + 1)


def kalman_update(mean: np.ndarray, cov: np.ndarray, z: np.ndarray,
                  z_pred: np.ndarray, H: np.ndarray, R: np.ndarray,
                  innovation: np.ndarray | None = None):
    """One Kalman measurement update in Joseph form.

    R is the noise covariance of this measurement block (2-D). Passing the
    innovation explicitly lets callers wrap angular residuals.
    """
    nu = z - z_pred if innovation is None else innovation
    S = H @ cov @ H.T + R
    K = np.linalg.solve(S.T, H @ cov).T
    mean = mean + K @ nu
    ImKH = np.eye(len(mean)) - K @ H
    cov = ImKH @ cov @ ImKH.T + K @ R @ K.T
    return mean, 0.5 * (cov + cov.T)


def _measurement_order(measurements) -> list[Measurement]:
    return sorted(measurements, key=lambda m: (m.hop_age, m.origin_id))


def _block(mean: np.ndarray, m: Measurement, mode: SensingMode,
           params: SensorParams, dt: float, q_age: float):
    """Predicted values, Jacobian, noise and wrapped innovation for one update."""
    z = sensing.measurement_vector(m, mode)
    d_pred = float(np.linalg.norm(mean[:3] - m.origin_pose))
    if d_pred < 1e-6:
        raise sensing.SingularityError("predicted target sits on the sensor")
    z_pred = sensing.predict_measurement(mean, m.origin_pose, mode)
    H = sensing.measurement_jacobian(mean, m.origin_pose, mode)
    # Noise floor at the 1 m reference distance keeps sigma_r sane if the
    # predicted range collapses.
    var = sensing.noise_variances(max(d_pred, 1.0), mode, params)
    if q_age > 0.0 and m.hop_age > 0:
        var = var * (1.0 + m.hop_age * dt * q_age)
    nu = z - z_pred
    if mode.bearing:
        az_row = 1 if mode.range else 0
        nu[az_row] = wrap_angle(nu[az_row])
    return z, z_pred, H, np.diag(var), nu


def _ukf_block_update(mean, cov, m, mode, params, dt, q_age):
    """Unscented update for one measurement block (symmetric sigma set)."""
    z = sensing.measurement_vector(m, mode)
    d_pred = float(np.linalg.norm(mean[:3] - m.origin_pose))
    if d_pred < 1e-6:
        raise sensing.SingularityError("predicted target sits on the sensor")
    var = sensing.noise_variances(max(d_pred, 1.0), mode, params)
    if q_age > 0.0 and m.hop_age > 0:
        var = var * (1.0 + m.hop_age * dt * q_age)
    R = np.diag(var)

    n = STATE_DIM
    try:
        root = np.linalg.cholesky(n * cov)
    except np.linalg.LinAlgError:
        root = np.linalg.cholesky(n * cov + 1e-9 * np.eye(n))
    points = np.concatenate([mean + root.T, mean - root.T])  # (2n, 6)
    Z = np.array([sensing.predict_measurement(p, m.origin_pose, mode)
                  for p in points])  # (2n, m)
    ref = sensing.predict_measurement(mean, m.origin_pose, mode)
    if mode.bearing:
        az_row = 1 if mode.range else 0
        Z[:, az_row] = ref[az_row] + np.array(
            [wrap_angle(v - ref[az_row]) for v in Z[:, az_row]])
    z_hat = Z.mean(axis=0)
    dZ = Z - z_hat
    dX = points - mean
    S = dZ.T @ dZ / (2 * n) + R
    Cxz = dX.T @ dZ / (2 * n)
    K = np.linalg.solve(S.T, Cxz.T).T
    nu = z - z_hat
    if mode.bearing:
        nu[az_row] = wrap_angle(nu[az_row])
    mean = mean + K @ nu
    cov = cov - K @ S @ K.T
    return mean, 0.5 * (cov + cov.T), nu


def update(belief: Belief, measurements, mode: SensingMode, params: SensorParams,
           dt: float = 1.0, q_age: float = 0.0, kind: str = "ekf") -> Belief:
    """Fuse a batch of measurements sequentially into the belief.

    Measurements are applied one at a time in ascending (hop_age, origin_id)
    order so the result is deterministic. A measurement producing a non-finite
    innovation (or degenerate geometry) is logged and skipped.
    """
    mean = belief.mean.copy()
    cov = belief.covariance.copy()
    for m in _measurement_order(measurements):
        try:
            if kind == "ukf":
                new_mean, new_cov, nu = _ukf_block_update(
                    mean, cov, m, mode, params, dt, q_age)
            else:
                z, z_pred, H, R, nu = _block(mean, m, mode, params, dt, q_age)
                if not np.all(np.isfinite(nu)):
                    raise FloatingPointError(f"non-finite innovation {nu}")
                new_mean, new_cov = kalman_update(mean, cov, z, z_pred, H, R,
                                                  innovation=nu)
            if not np.all(np.isfinite(nu)) or not np.all(np.isfinite(new_mean)):
                raise FloatingPointError("non-finite update result")
        except (sensing.SingularityError, FloatingPointError,
                np.linalg.LinAlgError) as exc:
            log.debug("skipping measurement from uav %s at step %s: %s",
                      m.origin_id, m.step, exc)
            continue
        mean, cov = new_mean, new_cov
    return Belief(mean, cov, belief.step)


def estimate(belief: Belief) -> np.ndarray:
    """MMSE point estimate under the Gaussian approximation: the mean."""
    return belief.mean.copy()


def nees(belief: Belief, truth: TargetState) -> float:
    """Normalized estimation error squared over all 6 state dimensions."""
    err = truth.state_vector() - belief.mean
    cov = belief.covariance
    try:
        sol = np.linalg.solve(cov, err)
    except np.linalg.LinAlgError:
        sol = np.linalg.solve(cov + 1e-9 * np.eye(STATE_DIM), err)
    return float(err @ sol)


# --- Track initialization ----------------------------------------------------

def _backproject(m: Measurement) -> np.ndarray:
    d, a, e = m.range, m.azimuth, m.elevation
    direction = np.array([math.cos(e) * math.cos(a),
                          math.cos(e) * math.sin(a),
                          math.sin(e)])
    return m.origin_pose + d * direction


def _ray_intersection(ms: list[Measurement]) -> np.ndarray | None:
    # Least-squares point closest to all bearing rays.
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for m in ms:
        a, e = m.azimuth, m.elevation
        u = np.array([math.cos(e) * math.cos(a),
                      math.cos(e) * math.sin(a),
                      math.sin(e)])
        P = np.eye(3) - np.outer(u, u)
        A += P
        b += P @ m.origin_pose
    if np.linalg.matrix_rank(A, tol=1e-9) < 3:
        return None
    return np.linalg.solve(A, b)


def _multilaterate(ms: list[Measurement]) -> np.ndarray | None:
    # Linearized trilateration; clustered origins make this ill-conditioned,
    # so implausible solutions are rejected in favor of the prior.
    p0, r0 = ms[0].origin_pose, ms[0].range
    A = np.array([2.0 * (m.origin_pose - p0) for m in ms[1:]])
    b = np.array([r0 ** 2 - m.range ** 2
                  + m.origin_pose @ m.origin_pose - p0 @ p0 for m in ms[1:]])
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    origins = np.array([m.origin_pose for m in ms])
    centroid = origins.mean(axis=0)
    spread = np.linalg.norm(origins - centroid, axis=1).max()
    max_r = max(m.range for m in ms)
    if np.linalg.norm(x - centroid) > 1.5 * (max_r + spread):
        return None
    return x


def _refine(seed: np.ndarray, ms: list[Measurement],
            params: SensorParams | None) -> np.ndarray:
    def residuals(x):
        out = []
        for m in ms:
            delta = x - m.origin_pose
            d = np.linalg.norm(delta)
            if m.range is not None:
                sig = sensing.range_std(max(m.range, 1.0), params) if params else 1.0
                out.append((d - m.range) / sig)
            if m.azimuth is not None:
                sig = params.sigma_bearing if params else 1.0
                out.append(wrap_angle(math.atan2(delta[1], delta[0]) - m.azimuth) / sig)
            if m.elevation is not None:
                sig = params.sigma_bearing if params else 1.0
                rho = math.hypot(delta[0], delta[1])
                out.append((math.atan2(delta[2], rho) - m.elevation) / sig)
        return np.array(out)

    try:
        sol = scipy.optimize.least_squares(residuals, seed, method="lm",
                                           max_nfev=200)
        if np.all(np.isfinite(sol.x)):
            return sol.x
    except Exception as exc:  # refinement is best-effort
        log.debug("init refinement failed: %s", exc)
    return seed


def init_belief(first_measurements, prior: PriorConfig,
                params: SensorParams | None = None) -> Belief:
    """Start a track from the first measurement batch (or the prior region).

    Position is back-projected from a range+bearing measurement when one
    exists, intersected from bearing rays, or multilaterated from ranges;
    with several informative measurements the seed is refined by weighted
    nonlinear least squares. Velocity always starts at zero: a single
    snapshot carries no velocity information.
    """
    ms = _measurement_order([m for m in first_measurements if m is not None])
    informative = [m for m in ms if m.range is not None or m.azimuth is not None]
    pos = None
    for m in informative:
        if m.range is not None and m.azimuth is not None and m.elevation is not None:
            pos = _backproject(m)
            break
    if pos is None:
        rays = [m for m in informative if m.azimuth is not None
                and m.elevation is not None]
        if len(rays) >= 2:
            pos = _ray_intersection(rays)
    if pos is None:
        ranged = [m for m in informative if m.range is not None]
        if len(ranged) >= 3:
            pos = _multilaterate(ranged)
    if pos is None:
        if prior.center is None:
            raise InitializationError(
                "cannot initialize: no informative measurements and no prior region")
        pos = np.asarray(prior.center, dtype=float).copy()
    n_residuals = sum((m.range is not None) + (m.azimuth is not None)
                      + (m.elevation is not None) for m in informative)
    if n_residuals >= 3:
        pos = _refine(pos, informative, params)

    mean = np.concatenate([pos, np.zeros(3)])
    cov = np.diag([prior.position_sigma ** 2] * 3
                  + [prior.velocity_sigma ** 2] * 3)
    step = ms[0].step if ms else 0
    return Belief(mean, cov, step)
