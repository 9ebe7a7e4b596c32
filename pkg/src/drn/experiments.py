"""Monte Carlo harness: episodes, RMSE summaries, table comparisons, sweeps.

One episode runs the per-step loop sense -> disseminate -> fuse -> plan ->
move; fixed fleets skip the plan/move phase. Everything is deterministic in
(config, seed).

Seed discipline (documented so other implementations can pair runs): run r of
a batch uses the integer seed drawn from SeedSequence(base_seed,
spawn_key=(r,)). Inside an episode, stream (0,) drives UAV placement, stream
(1,) the target walk, and stream (2, k, uav_id) the four measurement-noise
draws of UAV uav_id at step k. Keying noise by (seed, step, uav) gives common
random numbers across compared configurations: a dynamic and a fixed fleet
with the same seed see identical target trajectories and identical standard
normal draws, so paired comparisons are variance-reduced by construction.
"""

from __future__ import annotations

import io
import json
import logging
import math
import multiprocessing
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import control, fusion, network, sensing, world
from .config import (
    SWEEP_AXES,
    ScenarioConfig,
    TableCell,
    config_hash,
)
from .world import ConfigurationError

__all__ = [
    "EpisodeLog",
    "RmseSummary",
    "run_episode",
    "run_many",
    "rmse",
    "compare_table",
    "sweep",
    "paired_bootstrap_upper",
    "episode_csv",
    "table_csv",
]

log = logging.getLogger(__name__)


def run_seed(base_seed: int, run_index: int) -> int:
    """Per-run integer seed: counter-based split of the master seed."""
    seq = np.random.SeedSequence(base_seed, spawn_key=(run_index,))
    return int(seq.generate_state(1, np.uint64)[0])


def _noise_rng(seed: int, step: int, uav_id: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(2, step, uav_id)))


@dataclass
class EpisodeLog:
    """Per-step record of one episode; arrays indexed [step] or [step, uav]."""

    seed: int
    config_hash: str
    params: dict
    truth: np.ndarray  # (K, 6)
    poses: np.ndarray  # (K, N, 3)
    estimates: np.ndarray  # (K, N, 6), NaN before a UAV detects
    est_valid: np.ndarray  # (K, N) bool
    los: np.ndarray  # (K, N) bool, own measurement obtained
    fresh_count: np.ndarray  # (K, N) int
    chosen_cost: np.ndarray  # (K, N), NaN when no plan ran

    @property
    def steps(self) -> int:
        return self.truth.shape[0]

    @property
    def n_uavs(self) -> int:
        return self.poses.shape[1]

    def min_target_distance(self) -> float:
        """Smallest true UAV-target distance over the whole episode."""
        if self.steps == 0:
            return math.inf
        d = np.linalg.norm(self.poses - self.truth[:, None, :3], axis=2)
        return float(d.min())


def run_episode(config: ScenarioConfig, seed: int) -> EpisodeLog:
    """Run one deterministic episode of the sense/share/fuse/plan/move loop."""
    config.validate()
    w = world.init_scenario(config, seed)
    steps = config.world.steps
    n = config.fleet.n
    dt = config.world.dt
    dynamic = config.fleet.kind == "dynamic"

    mode = config.sensing_mode()
    params = config.sensor_params()
    constraints = config.constraints()
    model = fusion.MotionModel(q=config.fusion.process_noise)
    prior = fusion.PriorConfig(
        center=np.asarray(config.fusion.prior_center, dtype=float),
        position_sigma=config.fusion.prior_position_sigma,
        velocity_sigma=config.fusion.prior_velocity_sigma)
    q_age = config.fusion.age_inflation
    filter_kind = config.fusion.filter
    ctl = config.control

    target_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))

    truth_log = np.zeros((steps, 6))
    pose_log = np.zeros((steps, n, 3))
    est_log = np.full((steps, n, 6), np.nan)
    valid_log = np.zeros((steps, n), dtype=bool)
    los_log = np.zeros((steps, n), dtype=bool)
    fresh_log = np.zeros((steps, n), dtype=int)
    cost_log = np.full((steps, n), np.nan)

    beliefs: list[fusion.Belief | None] = [None] * n
    prev_heading = [0.0] * n
    kbs: dict[int, network.KnowledgeBase] | None = None

    for k in range(steps):
        truth_log[k] = w.target.state_vector()
        for i, pose in enumerate(w.uavs):
            pose_log[k, i] = pose.position

        # 1) sense
        packets = {}
        for pose in w.uavs:
            m = sensing.measure(pose, w.target, mode, params, w.obstacles,
                                _noise_rng(seed, k, pose.id), step=k)
            los_log[k, pose.id] = m is not None
            packets[pose.id] = network.Packet(pose.id, pose.position.copy(), k, m)

        # 2) disseminate
        graph = network.build_graph(w.uavs, config.network.comm_range)
        kbs = network.disseminate(packets, graph, config.network.hop_limit,
                                  previous=kbs,
                                  stale_cache=config.network.stale_cache)

        # 3) fuse
        for i in range(n):
            fresh = kbs[i].fresh_measurements(k)
            fresh_log[k, i] = kbs[i].fresh_count(k)
            if beliefs[i] is None:
                if fresh:
                    beliefs[i] = fusion.init_belief(fresh, prior, params)
            else:
                b = fusion.predict(beliefs[i], dt, model)
                beliefs[i] = fusion.update(b, fresh, mode, params, dt=dt,
                                           q_age=q_age, kind=filter_kind)
            if beliefs[i] is not None:
                est_log[k, i] = fusion.estimate(beliefs[i])
                valid_log[k, i] = True

        # 4) plan and move (dynamic fleets only)
        if dynamic:
            new_uavs = []
            for i, pose in enumerate(w.uavs):
                if beliefs[i] is None:
                    new_uavs.append(pose)
                    continue
                predicted = fusion.predict(beliefs[i], dt, model)
                plan = control.plan_waypoint(
                    kbs[i], predicted, pose, constraints, ctl.criterion, mode,
                    params, prev_heading=prev_heading[i], dt=dt,
                    n_headings=ctl.n_headings,
                    speed_fractions=tuple(ctl.speed_fractions),
                    include_prior=ctl.include_prior,
                    safety_margin_sigma=ctl.safety_margin_sigma)
                cost_log[k, i] = plan.cost
                u = control.control_signal(plan.position, pose.position)
                new_pose = world.apply_control(pose, u, constraints, dt)
                if u[0] != 0.0 or u[1] != 0.0:
                    prev_heading[i] = math.atan2(u[1], u[0])
                new_uavs.append(new_pose)
            w.uavs = new_uavs

        # 5) target moves, clock advances
        w.target = world.step_target(w.target, w.clock, target_rng,
                                     sigma_heading=w.sigma_heading,
                                     speed=w.target_speed)
        w.clock.tick()

    return EpisodeLog(seed=seed, config_hash=config_hash(config),
                      params=config.to_dict(), truth=truth_log, poses=pose_log,
                      estimates=est_log, est_valid=valid_log, los=los_log,
                      fresh_count=fresh_log, chosen_cost=cost_log)


def _episode_task(args) -> EpisodeLog:
    cfg, seed = args
    return run_episode(cfg, seed)


def run_many(config: ScenarioConfig, runs: int | None = None,
             jobs: int = 1) -> list[EpisodeLog]:
    """Run the configured Monte Carlo batch; results ordered by run index."""
    mc = config.monte_carlo
    n_runs = mc.runs if runs is None else runs
    tasks = [(config, run_seed(mc.base_seed, r)) for r in range(n_runs)]
    if jobs <= 1 or n_runs == 1:
        return [_episode_task(t) for t in tasks]
    with multiprocessing.Pool(processes=min(jobs, n_runs)) as pool:
        return pool.map(_episode_task, tasks, chunksize=1)


# --- Metrics ------------------------------------------------------------------

@dataclass
class RmseSummary:
    """Pooled and per-run RMSE of position and velocity, post-detection only."""

    position_rmse: float
    velocity_rmse: float
    position_rmse_runs: list = field(default_factory=list)
    velocity_rmse_runs: list = field(default_factory=list)
    position_rmse_mean: float = math.nan  # mean of per-run values
    position_rmse_std: float = math.nan
    velocity_rmse_mean: float = math.nan
    velocity_rmse_std: float = math.nan
    position_rmse_best_uav: float = math.nan
    position_rmse_central: float = math.nan
    runs_used: int = 0


def _squared_errors(log: EpisodeLog):
    mask = log.est_valid
    pos_err = log.estimates[:, :, :3] - log.truth[:, None, :3]
    vel_err = log.estimates[:, :, 3:] - log.truth[:, None, 3:]
    pos_sq = np.einsum("kij,kij->ki", pos_err, pos_err)
    vel_sq = np.einsum("kij,kij->ki", vel_err, vel_err)
    return mask, pos_sq, vel_sq


def rmse(logs: list[EpisodeLog]) -> RmseSummary:
    """Pooled RMSE over runs, post-detection steps and UAV-local estimates.

    The headline numbers pool every (run, step, uav) sample; per-run values
    and their mean/std across runs are kept alongside. A best-UAV and a
    central (across-UAV mean estimate) variant are reported for transparency
    since the network has no single consensus estimate.
    """
    if not logs:
        raise ValueError("rmse needs at least one episode log")
    pos_runs, vel_runs, best_runs, central_runs = [], [], [], []
    pos_pool, vel_pool = [], []
    for lg in logs:
        mask, pos_sq, vel_sq = _squared_errors(lg)
        if not mask.any():
            warnings.warn(f"episode seed={lg.seed} has no post-detection steps; "
                          "excluded from RMSE")
            continue
        pos_pool.append(pos_sq[mask])
        vel_pool.append(vel_sq[mask])
        pos_runs.append(float(np.sqrt(pos_sq[mask].mean())))
        vel_runs.append(float(np.sqrt(vel_sq[mask].mean())))
        # Best single UAV of this run.
        per_uav = [float(np.sqrt(pos_sq[mask[:, i], i].mean()))
                   for i in range(lg.n_uavs) if mask[:, i].any()]
        best_runs.append(min(per_uav))
        # Central estimate: average the valid UAV estimates per step.
        with np.errstate(invalid="ignore"):
            weights = mask[:, :, None].astype(float)
            denom = weights.sum(axis=1)
            central = np.where(denom > 0,
                               np.nansum(lg.estimates * weights, axis=1) / denom,
                               np.nan)
        step_mask = mask.any(axis=1)
        cerr = central[step_mask, :3] - lg.truth[step_mask, :3]
        central_runs.append(float(np.sqrt((cerr ** 2).sum(axis=1).mean())))
    if not pos_runs:
        raise ValueError("no episode contained post-detection steps")
    pos_all = np.concatenate(pos_pool)
    vel_all = np.concatenate(vel_pool)
    n_runs = len(pos_runs)
    return RmseSummary(
        position_rmse=float(np.sqrt(pos_all.mean())),
        velocity_rmse=float(np.sqrt(vel_all.mean())),
        position_rmse_runs=pos_runs,
        velocity_rmse_runs=vel_runs,
        position_rmse_mean=float(np.mean(pos_runs)),
        position_rmse_std=float(np.std(pos_runs, ddof=1)) if n_runs > 1 else 0.0,
        velocity_rmse_mean=float(np.mean(vel_runs)),
        velocity_rmse_std=float(np.std(vel_runs, ddof=1)) if n_runs > 1 else 0.0,
        position_rmse_best_uav=float(np.mean(best_runs)),
        position_rmse_central=float(np.mean(central_runs)),
        runs_used=n_runs,
    )


# --- Comparisons --------------------------------------------------------------

def cell_config(base: ScenarioConfig, cell: TableCell) -> ScenarioConfig:
    cfg = base.copy()
    cfg.sensing.mode = cell.mode
    cfg.fleet.kind = cell.fleet
    cfg.validate()
    return cfg


def compare_table(labeled_configs, jobs: int = 1,
                  runs: int | None = None):
    """Run each labeled config on the shared Monte Carlo plan.

    All configs must share the world section and Monte Carlo plan so the
    comparison is paired through common random numbers.

    Returns a list of (label, ScenarioConfig, RmseSummary, [EpisodeLog]).
    """
    if not labeled_configs:
        raise ConfigurationError("compare_table needs at least one config")
    ref = labeled_configs[0][1]
    for label, cfg in labeled_configs:
        if (cfg.monte_carlo.runs, cfg.monte_carlo.base_seed) != (
                ref.monte_carlo.runs, ref.monte_carlo.base_seed):
            raise ConfigurationError(
                f"cell '{label}': Monte Carlo plan differs from '{labeled_configs[0][0]}'")
        if cfg.world != ref.world:
            raise ConfigurationError(
                f"cell '{label}': world section differs from '{labeled_configs[0][0]}'")
    out = []
    for label, cfg in labeled_configs:
        log.info("running cell %s", label)
        logs = run_many(cfg, runs=runs, jobs=jobs)
        out.append((label, cfg, rmse(logs), logs))
    return out


def sweep(base: ScenarioConfig, axis: str, values, jobs: int = 1,
          runs: int | None = None):
    """One RMSE summary per axis value, common seeds across values.

    Returns a list of (value, RmseSummary, [EpisodeLog]).
    """
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"sweep axis must be one of {SWEEP_AXES}")
    if not values:
        raise ConfigurationError("sweep needs a non-empty list of values")
    out = []
    for value in values:
        cfg = base.copy()
        if axis == "N":
            cfg.fleet.n = int(value)
        elif axis == "rcs":
            cfg.sensing.rcs = float(value)
        elif axis == "sigma0r":
            cfg.sensing.sigma0r = float(value)
        else:  # sigma_bearing, degrees
            cfg.sensing.sigma_bearing_deg = float(value)
        cfg.validate()
        log.info("sweep %s=%s", axis, value)
        logs = run_many(cfg, runs=runs, jobs=jobs)
        out.append((value, rmse(logs), logs))
    return out


def paired_bootstrap_upper(diffs, confidence: float = 0.95,
                           n_boot: int = 4000, seed: int = 0) -> float:
    """Upper confidence bound of the mean of paired differences (bootstrap)."""
    diffs = np.asarray(diffs, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(diffs), size=(n_boot, len(diffs)))
    means = diffs[idx].mean(axis=1)
    return float(np.quantile(means, confidence))


# --- Export -------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.10g}"

EPISODE_COLUMNS = (
    ["step", "uav_id"]
    + [f"truth_{c}" for c in ("px", "py", "pz", "vx", "vy", "vz")]
    + [f"est_{c}" for c in ("px", "py", "pz", "vx", "vy", "vz")]
    + ["pose_x", "pose_y", "pose_z", "los_flag", "fresh_count", "chosen_cost"]
)


def episode_csv(log_: EpisodeLog) -> str:
    """CSV text, one row per (step, uav); header comment carries the config."""
    buf = io.StringIO()
    params_json = json.dumps(log_.params, sort_keys=True, separators=(",", ":"))
    buf.write(f"# drn-episode config_hash={log_.config_hash} seed={log_.seed} "
              f"params={params_json}\n")
    buf.write(",".join(EPISODE_COLUMNS) + "\n")
    for k in range(log_.steps):
        truth = ",".join(_fmt(v) for v in log_.truth[k])
        for i in range(log_.n_uavs):
            est = ",".join(_fmt(v) for v in log_.estimates[k, i])
            pose = ",".join(_fmt(v) for v in log_.poses[k, i])
            buf.write(f"{k},{i},{truth},{est},{pose},"
                      f"{int(log_.los[k, i])},{log_.fresh_count[k, i]},"
                      f"{_fmt(log_.chosen_cost[k, i])}\n")
    return buf.getvalue()


TABLE_COLUMNS = [
    "label", "mode", "fleet", "runs", "steps", "base_seed", "config_hash",
    "position_rmse", "velocity_rmse", "position_rmse_mean", "position_rmse_std",
    "velocity_rmse_mean", "velocity_rmse_std", "position_rmse_best_uav",
    "position_rmse_central", "params_json",
]


def table_csv(results) -> str:
    """Strict rectangular CSV for a list of (label, config, summary, logs)."""
    import csv as _csv

    buf = io.StringIO()
    writer = _csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    for label, cfg, summary, _ in results:
        writer.writerow([
            label, cfg.sensing.mode, cfg.fleet.kind, cfg.monte_carlo.runs,
            cfg.world.steps, cfg.monte_carlo.base_seed, config_hash(cfg),
            _fmt(summary.position_rmse), _fmt(summary.velocity_rmse),
            _fmt(summary.position_rmse_mean), _fmt(summary.position_rmse_std),
            _fmt(summary.velocity_rmse_mean), _fmt(summary.velocity_rmse_std),
            _fmt(summary.position_rmse_best_uav),
            _fmt(summary.position_rmse_central),
            json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")),
        ])
    return buf.getvalue()


def summary_json(results) -> str:
    out = []
    for label, cfg, summary, _ in results:
        out.append({
            "label": label,
            "mode": cfg.sensing.mode,
            "fleet": cfg.fleet.kind,
            "config_hash": config_hash(cfg),
            "position_rmse": summary.position_rmse,
            "velocity_rmse": summary.velocity_rmse,
            "position_rmse_mean": summary.position_rmse_mean,
            "position_rmse_std": summary.position_rmse_std,
            "velocity_rmse_mean": summary.velocity_rmse_mean,
            "velocity_rmse_std": summary.velocity_rmse_std,
            "position_rmse_best_uav": summary.position_rmse_best_uav,
            "position_rmse_central": summary.position_rmse_central,
            "runs_used": summary.runs_used,
        })
    return json.dumps(out, indent=2, sort_keys=True)
