"""Information-driven waypoint planning.

Each UAV chooses its next position by minimizing an optimal-experimental-
design scalarization of the information matrix the network would hold about
the predicted target state if it moved there:

    J(candidate) = P_pred^-1 + sum_sensors H^T R^-1 H,

summing the candidate's own next-step measurement term with one term per
peer position it knows about (peers are assumed to hold their last known
positions). The cost is evaluated on the position block of J, obtained as
the Schur complement of the velocity block: A-optimality is the trace of the
inverse, D-optimality its determinant, E-optimality the largest eigenvalue
of the inverse. The minimizer is found by exhaustive search over a discrete
kinematically-feasible candidate set (hover, plus two speeds times a fan of
headings within the turn-rate limit), with deterministic tie-breaking.

All costs flow through one batched eigenvalue kernel; the scalar operations
are batch-of-one wrappers, so the planner and any per-candidate re-evaluation
produce bitwise-identical numbers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import sensing
from .fusion import Belief
from .sensing import SensingMode, SensorParams
from .world import KinematicConstraints, UavPose

__all__ = [
    "CandidateSet",
    "PlanResult",
    "OED_CRITERIA",
    "fim",
    "oed_cost",
    "candidate_set",
    "plan_waypoint",
    "control_signal",
]

log = logging.getLogger(__name__)

OED_CRITERIA = ("A", "D", "E")


@dataclass(frozen=True)
class CandidateSet:
    """Discrete next-position candidates with tie-breaking metadata."""

    positions: np.ndarray  # (C, 3)
    displacement: np.ndarray  # (C,)
    heading_index: np.ndarray  # (C,), -1 for the hover candidate


@dataclass(frozen=True)
class PlanResult:
    position: np.ndarray  # chosen next position (3,)
    cost: float
    fallback: bool = False  # true when no candidate was feasible


def _sensor_terms_batch(sensor_pos: np.ndarray, mean: np.ndarray,
                        mode: SensingMode, params: SensorParams) -> np.ndarray:
    """Per-sensor information increments H^T R^-1 H; shape (C, 6, 6).

    Degenerate geometries (coincident with the target estimate, or boresight
    within the gimbal margin) contribute nothing and are logged.
    """
    sensor_pos = np.atleast_2d(np.asarray(sensor_pos, dtype=float))
    delta = mean[:3][None, :] - sensor_pos
    d = np.linalg.norm(delta, axis=1)
    rho = np.hypot(delta[:, 0], delta[:, 1])
    valid = (d > 1e-9) & (rho > d * math.sin(sensing.GIMBAL_MARGIN))
    if not np.all(valid):
        log.debug("skipping %d singular sensor geometries", int((~valid).sum()))
    rows = list(mode.channel_indices())
    H = sensing.jacobian_batch(sensor_pos, mean)[:, rows, :]  # (C, m, 6)
    # Per-channel variances at the predicted range, floored at 1 m.
    var = np.empty((len(d), len(rows)))
    d_eff = np.maximum(d, 1.0)
    col = 0
    if mode.range:
        var[:, col] = (params.sigma0r * d_eff ** 2 / math.sqrt(params.rcs)) ** 2
        col += 1
    if mode.bearing:
        var[:, col] = params.sigma_bearing ** 2
        var[:, col + 1] = params.sigma_bearing ** 2
        col += 2
    if mode.doppler:
        var[:, col] = params.sigma_doppler ** 2
    H = np.where(valid[:, None, None], H, 0.0)
    # Fixed-order sum over channels with elementwise products only: the same
    # bits come out whatever the batch size, unlike einsum/BLAS contractions,
    # which is what makes scalar re-evaluation reproduce planner costs.
    w = 1.0 / var
    terms = np.zeros((H.shape[0], 6, 6))
    for k in range(H.shape[1]):
        hk = H[:, k, :]
        terms += (w[:, k, None, None] * hk[:, :, None]) * hk[:, None, :]
    return terms


def _prior_information(covariance: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.inv(covariance)
    except np.linalg.LinAlgError:
        log.debug("near-singular predicted covariance, regularizing")
        return np.linalg.inv(covariance + 1e-9 * np.eye(len(covariance)))


def _base_information(peer_poses, predicted: Belief, mode: SensingMode,
                      params: SensorParams, include_prior: bool) -> np.ndarray:
    J = np.zeros((6, 6))
    if include_prior:
        J = J + _prior_information(predicted.covariance)
    if len(peer_poses):
        J = J + _sensor_terms_batch(np.asarray(peer_poses, dtype=float),
                                    predicted.mean, mode, params).sum(axis=0)
    return J


def fim(candidate: np.ndarray, peer_poses, predicted: Belief, mode: SensingMode,
        params: SensorParams, include_prior: bool = True) -> np.ndarray:
    """Information matrix at one candidate position (6x6).

    Includes the one-step-predicted prior unless ``include_prior`` is off
    (pure next-measurement Fisher information).
    """
    J = _base_information(peer_poses, predicted, mode, params, include_prior)
    term = _sensor_terms_batch(np.asarray(candidate, dtype=float)[None, :],
                               predicted.mean, mode, params)[0]
    J = J + term
    return 0.5 * (J + J.T)


# The whole cost pipeline below uses closed-form 3x3 linear algebra built from
# elementwise numpy operations. Batched LAPACK kernels (solve, eigvalsh) do not
# return the same bits for a batch of 33 as for a batch of 1, which would let
# the planner and per-candidate re-evaluation disagree on near-ties; fixed
# closed-form expressions are batch-size independent by construction.

def _det3(M: np.ndarray) -> np.ndarray:
    a, b, c = M[..., 0, 0], M[..., 0, 1], M[..., 0, 2]
    d, e, f = M[..., 1, 0], M[..., 1, 1], M[..., 1, 2]
    g, h, i = M[..., 2, 0], M[..., 2, 1], M[..., 2, 2]
    return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)


def _adjugate3(M: np.ndarray) -> np.ndarray:
    a, b, c = M[..., 0, 0], M[..., 0, 1], M[..., 0, 2]
    d, e, f = M[..., 1, 0], M[..., 1, 1], M[..., 1, 2]
    g, h, i = M[..., 2, 0], M[..., 2, 1], M[..., 2, 2]
    out = np.empty_like(M)
    out[..., 0, 0] = e * i - f * h
    out[..., 0, 1] = c * h - b * i
    out[..., 0, 2] = b * f - c * e
    out[..., 1, 0] = f * g - d * i
    out[..., 1, 1] = a * i - c * g
    out[..., 1, 2] = c * d - a * f
    out[..., 2, 0] = d * h - e * g
    out[..., 2, 1] = b * g - a * h
    out[..., 2, 2] = a * e - b * d
    return out


def _matmul3(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return (A[..., :, 0, None] * B[..., None, 0, :]
            + A[..., :, 1, None] * B[..., None, 1, :]
            + A[..., :, 2, None] * B[..., None, 2, :])


def _eigvals_sym3(M: np.ndarray) -> np.ndarray:
    """Eigenvalues of symmetric 3x3 stacks, ascending; trigonometric form."""
    a, b, c = M[..., 0, 0], M[..., 1, 1], M[..., 2, 2]
    d, e, f = M[..., 0, 1], M[..., 1, 2], M[..., 0, 2]
    p1 = d * d + e * e + f * f
    q = (a + b + c) / 3.0
    p2 = (a - q) ** 2 + (b - q) ** 2 + (c - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    safe_p = np.where(p > 0.0, p, 1.0)
    Bm = (M - q[..., None, None] * np.eye(3)) / safe_p[..., None, None]
    r = np.clip(_det3(Bm) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    lam_hi = q + 2.0 * safe_p * np.cos(phi)
    lam_lo = q + 2.0 * safe_p * np.cos(phi + 2.0 * math.pi / 3.0)
    lam_mid = 3.0 * q - lam_hi - lam_lo
    lam_hi = np.where(p > 0.0, lam_hi, q)
    lam_mid = np.where(p > 0.0, lam_mid, q)
    lam_lo = np.where(p > 0.0, lam_lo, q)
    return np.stack([lam_lo, lam_mid, lam_hi], axis=-1)


def _position_block_batch(J: np.ndarray) -> np.ndarray:
    """Marginal position information: Schur complement of the velocity block."""
    A = J[:, :3, :3]
    B = J[:, :3, 3:]
    D = J[:, 3:, 3:]
    det = _det3(D)
    scale = np.abs(D).max(axis=(1, 2))
    degenerate = np.abs(det) <= 1e-27 * np.maximum(scale, 1e-300) ** 3
    out = np.empty_like(A)
    ok = ~degenerate
    if np.any(ok):
        Dinv = _adjugate3(D[ok]) / det[ok][:, None, None]
        Bt = np.swapaxes(B[ok], 1, 2)
        out[ok] = A[ok] - _matmul3(B[ok], _matmul3(Dinv, Bt))
    for i in np.flatnonzero(degenerate):
        # Rank-deficient velocity information: generalized Schur via pinv,
        # item by item so the bits match any batch decomposition.
        out[i] = A[i] - B[i] @ np.linalg.pinv(D[i]) @ B[i].T
    return out


def _costs_batch(J: np.ndarray, criterion: str, position_only: bool = True) -> np.ndarray:
    if criterion not in OED_CRITERIA:
        raise ValueError(f"criterion must be one of {OED_CRITERIA}, got {criterion!r}")
    if not position_only:
        return _costs_full_state(J, criterion)
    Jp = _position_block_batch(J)
    Jp = 0.5 * (Jp + np.swapaxes(Jp, 1, 2))
    lam = _eigvals_sym3(Jp)
    det = _det3(Jp)
    # Structurally singular matrices surface as eigenvalues at round-off level
    # of the largest one; treat those as singular rather than dividing by
    # noise (spec'd behavior: singular position information costs +inf).
    bad = (~np.all(np.isfinite(Jp), axis=(1, 2))
           | (lam[:, 0] <= 1e-12 * np.abs(lam[:, 2]))
           | (det <= 0.0))
    if criterion == "A":
        adj = _adjugate3(Jp)
        trace_adj = adj[:, 0, 0] + adj[:, 1, 1] + adj[:, 2, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            cost = trace_adj / det
    elif criterion == "D":
        with np.errstate(divide="ignore", invalid="ignore"):
            cost = 1.0 / det
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            cost = 1.0 / lam[:, 0]
    return np.where(bad | ~np.isfinite(cost), np.inf, cost)


def _costs_full_state(J: np.ndarray, criterion: str) -> np.ndarray:
    # Full 6x6 scalarization; only reached through the public oed_cost flag,
    # never by the planner, so plain LAPACK eigensolves are fine here.
    Js = 0.5 * (J + np.swapaxes(J, 1, 2))
    w = np.linalg.eigvalsh(Js)
    bad = ~np.all(np.isfinite(w), axis=1) | (w[:, 0] <= 0.0)
    w = np.where(bad[:, None], 1.0, w)
    if criterion == "A":
        cost = (1.0 / w).sum(axis=1)
    elif criterion == "D":
        cost = np.exp(-np.log(w).sum(axis=1))
    else:
        cost = 1.0 / w[:, 0]
    return np.where(bad, np.inf, cost)


def oed_cost(J: np.ndarray, criterion: str, position_only: bool = True) -> float:
    """Scalarize an information matrix; singular matrices cost +inf."""
    return float(_costs_batch(np.asarray(J, dtype=float)[None, :, :],
                              criterion, position_only)[0])


def candidate_set(pose: UavPose, prev_heading: float,
                  constraints: KinematicConstraints, dt: float,
                  n_headings: int = 16,
                  speed_fractions=(0.5, 1.0)) -> CandidateSet:
    """Hover plus a fan of headings at each speed fraction of v_max.

    The fan spans +-max_turn_rate*dt around the previous heading; once the
    span reaches a half turn the headings are spread evenly over the full
    circle instead (so an unconstrained turn rate yields n distinct headings,
    not a doubled +-pi endpoint).
    """
    half_span = constraints.max_turn_rate * dt
    if half_span >= math.pi:
        offsets = -math.pi + 2.0 * math.pi * np.arange(n_headings) / n_headings
    elif half_span == 0.0 or n_headings == 1:
        offsets = np.zeros(1)
    else:
        offsets = np.linspace(-half_span, half_span, n_headings)
    headings = prev_heading + offsets
    cos_sin = np.stack([np.cos(headings), np.sin(headings),
                        np.zeros_like(headings)], axis=1)
    positions = [pose.position.copy()]
    displacement = [0.0]
    heading_index = [-1]
    for frac in speed_fractions:
        step_len = frac * constraints.v_max * dt
        for h_idx in range(len(headings)):
            positions.append(pose.position + step_len * cos_sin[h_idx])
            displacement.append(step_len)
            heading_index.append(h_idx)
    return CandidateSet(np.array(positions), np.array(displacement),
                        np.array(heading_index))


def safety_radius(predicted: Belief, constraints: KinematicConstraints,
                  margin_sigma: float) -> float:
    """Stand-off distance from the predicted target position.

    The configured safety distance is measured from the *estimated* target,
    which can be off by the estimation error; widening the keep-out zone by
    margin_sigma times the predicted position spread makes the true-distance
    safety bound hold through the convergence transient as well.
    """
    radius = constraints.safety_distance_target
    if margin_sigma > 0.0:
        spread = float(np.linalg.eigvalsh(predicted.covariance[:3, :3])[-1])
        if spread > 0.0:
            radius += margin_sigma * math.sqrt(spread)
    return radius


def plan_waypoint(kb, predicted: Belief, pose: UavPose,
                  constraints: KinematicConstraints, criterion: str,
                  mode: SensingMode, params: SensorParams,
                  prev_heading: float = 0.0, dt: float = 1.0,
                  n_headings: int = 16, speed_fractions=(0.5, 1.0),
                  include_prior: bool = True,
                  safety_margin_sigma: float = 3.0) -> PlanResult:
    """Pick the feasible candidate minimizing the OED cost.

    Candidates closer than the safety stand-off to the predicted target
    position, or closer than the separation minimum to any known peer, are
    discarded. Ties break on (cost, displacement, heading index), so the
    result is fully deterministic. An empty feasible set falls back to
    hovering (logged).
    """
    cands = candidate_set(pose, prev_heading, constraints, dt,
                          n_headings, speed_fractions)
    target_pos = predicted.mean[:3]
    feasible = (np.linalg.norm(cands.positions - target_pos[None, :], axis=1)
                >= safety_radius(predicted, constraints, safety_margin_sigma))
    peer_poses = kb.peer_poses() if kb is not None else []
    for peer in peer_poses:
        feasible &= (np.linalg.norm(cands.positions - np.asarray(peer)[None, :],
                                    axis=1) >= constraints.min_uav_separation)
    if not np.any(feasible):
        log.debug("uav %s: no feasible candidate, hovering", pose.id)
        return PlanResult(pose.position.copy(), math.inf, fallback=True)

    J_base = _base_information(peer_poses, predicted, mode, params, include_prior)
    idx = np.flatnonzero(feasible)
    terms = _sensor_terms_batch(cands.positions[idx], predicted.mean, mode, params)
    J_all = J_base[None, :, :] + terms
    # Same symmetrization as fim(), element for element, so per-candidate
    # re-evaluation through fim()/oed_cost() reproduces these costs exactly.
    J_all = 0.5 * (J_all + np.swapaxes(J_all, 1, 2))
    costs = _costs_batch(J_all, criterion)
    order = np.lexsort((cands.heading_index[idx], cands.displacement[idx], costs))
    best = idx[order[0]]
    return PlanResult(cands.positions[best].copy(), float(costs[order[0]]))


def control_signal(next_position: np.ndarray, current: np.ndarray) -> np.ndarray:
    """Displacement command toward the planned waypoint."""
    return np.asarray(next_position, dtype=float) - np.asarray(current, dtype=float)
