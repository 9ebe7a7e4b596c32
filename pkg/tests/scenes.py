"""Shared random-scene generator and brute-force planning oracle."""

import math

import numpy as np

from drn.control import candidate_set, fim, oed_cost, safety_radius
from drn.fusion import Belief
from drn.network import KnowledgeBase, KnowledgeEntry
from drn.sensing import SensingMode, SensorParams
from drn.world import KinematicConstraints, UavPose

MODE_FLAGS = [
    dict(range=True, bearing=False, doppler=False),
    dict(range=True, bearing=False, doppler=True),
    dict(range=False, bearing=True, doppler=False),
    dict(range=False, bearing=True, doppler=True),
    dict(range=True, bearing=True, doppler=True),
]


def random_spd(rng, pos_scale, vel_scale):
    q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    eig = np.concatenate([rng.uniform(0.3, 1.0, 3) * pos_scale ** 2,
                          rng.uniform(0.3, 1.0, 3) * vel_scale ** 2])
    return (q * eig) @ q.T


def random_scene(rng, min_peers=0):
    """One random planning problem: (kb, predicted, pose, kwargs)."""
    pose = UavPose(0, rng.uniform([-100, -100, 30], [100, 100, 70]))
    n_peers = int(rng.integers(min_peers, 5))
    peers = rng.uniform([-100, -100, 30], [100, 100, 70], (n_peers, 3))
    entries = {0: KnowledgeEntry(0, pose.position, 0, 0)}
    for j in range(n_peers):
        entries[j + 1] = KnowledgeEntry(j + 1, peers[j], 0, 1)
    kb = KnowledgeBase(owner=0, entries=entries)

    target = rng.uniform([-80, -80, 10], [80, 80, 50])
    mean = np.concatenate([target, rng.uniform(-2, 2, 3)])
    cov = random_spd(rng, pos_scale=rng.uniform(3, 25), vel_scale=rng.uniform(0.3, 3))
    predicted = Belief(mean, cov, step=1)

    turn = math.inf if rng.uniform() < 0.3 else rng.uniform(0.2, 2.5)
    constraints = KinematicConstraints(
        v_max=rng.uniform(5, 15), max_turn_rate=turn,
        safety_distance_target=rng.uniform(20, 60),
        min_uav_separation=rng.uniform(5, 15))
    params = SensorParams(
        sigma0r=10 ** rng.uniform(-3.5, -2.0),
        sigma_bearing=math.radians(rng.uniform(2, 20)),
        sigma_doppler=rng.uniform(0.05, 0.5),
        rcs=rng.uniform(0.05, 1.0))
    kwargs = dict(
        constraints=constraints,
        criterion="ADE"[rng.integers(0, 3)],
        mode=SensingMode(**MODE_FLAGS[rng.integers(0, len(MODE_FLAGS))]),
        params=params,
        prev_heading=rng.uniform(-math.pi, math.pi),
        dt=rng.uniform(0.5, 2.0),
        include_prior=bool(rng.uniform() < 0.8),
        safety_margin_sigma=float(rng.choice([0.0, 1.0, 3.0])),
    )
    return kb, predicted, pose, kwargs


def brute_force_plan(kb, predicted, pose, constraints, criterion, mode, params,
                     prev_heading, dt, include_prior, safety_margin_sigma=3.0,
                     n_headings=16, speed_fractions=(0.5, 1.0)):
    """Re-evaluate every candidate through the scalar fim/oed_cost ops."""
    cands = candidate_set(pose, prev_heading, constraints, dt,
                          n_headings, speed_fractions)
    peers = kb.peer_poses()
    target = predicted.mean[:3]
    keep_out = safety_radius(predicted, constraints, safety_margin_sigma)
    best_key, best_pos = None, None
    for i, position in enumerate(cands.positions):
        if np.linalg.norm(position - target) < keep_out:
            continue
        if any(np.linalg.norm(position - np.asarray(p))
               < constraints.min_uav_separation for p in peers):
            continue
        J = fim(position, peers, predicted, mode, params, include_prior)
        key = (oed_cost(J, criterion), cands.displacement[i],
               cands.heading_index[i])
        if best_key is None or key < best_key:
            best_key, best_pos = key, position
    if best_pos is None:
        return pose.position.copy(), math.inf, True
    return best_pos, best_key[0], False
