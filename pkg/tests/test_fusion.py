import itertools
import math

import numpy as np
import pytest
import scipy.optimize
import scipy.stats

from drn.fusion import (
    Belief,
    InitializationError,
    MotionModel,
    PriorConfig,
    estimate,
    init_belief,
    kalman_update,
    nees,
    predict,
    transition,
    update,
)
from drn.sensing import Measurement, SensingMode, SensorParams, predict_measurement
from drn.world import TargetState, wrap_angle

RB = SensingMode(range=True, bearing=True, doppler=False)
TINY = SensorParams(sigma0r=1e-12, sigma_bearing=1e-12, sigma_doppler=1e-12, rcs=1.0)

TRUTH_POS = np.array([0.0, 0.0, 30.0])
UAV_POSITIONS = [np.array([80.0, 0.0, 50.0]),
                 np.array([-40.0, 70.0, 50.0]),
                 np.array([-40.0, -70.0, 50.0])]


def exact_measurement(uav_pos, origin_id, truth_pos=TRUTH_POS, step=0):
    state = np.concatenate([truth_pos, np.zeros(3)])
    rng_v, az, el = predict_measurement(state, uav_pos, RB)
    return Measurement(origin_id=origin_id, origin_pose=np.asarray(uav_pos, float),
                       step=step, range=float(rng_v), azimuth=float(az),
                       elevation=float(el))


def triangulation_oracle(measurements):
    """Independent nonlinear least-squares position fit on range+bearing."""
    def residuals(x):
        out = []
        for m in measurements:
            delta = x - m.origin_pose
            out.append(np.linalg.norm(delta) - m.range)
            out.append(wrap_angle(math.atan2(delta[1], delta[0]) - m.azimuth))
            out.append(math.atan2(delta[2], math.hypot(delta[0], delta[1]))
                       - m.elevation)
        return np.array(out)
    sol = scipy.optimize.least_squares(residuals, np.array([10.0, 10.0, 40.0]),
                                       xtol=1e-14, ftol=1e-14, gtol=1e-14)
    return sol.x


class TestInitBelief:
    def test_prior_fallback(self):
        prior = PriorConfig(center=np.array([1.0, 2.0, 3.0]),
                            position_sigma=20.0, velocity_sigma=2.0)
        b = init_belief([], prior)
        assert np.allclose(b.mean[:3], [1, 2, 3])
        assert np.allclose(np.diag(b.covariance), [400, 400, 400, 4, 4, 4])

    def test_no_prior_no_measurements_raises(self):
        with pytest.raises(InitializationError):
            init_belief([], PriorConfig(center=None))

    def test_exact_backprojection(self):
        m = exact_measurement(UAV_POSITIONS[0], 0)
        b = init_belief([m], PriorConfig(center=None))
        assert np.linalg.norm(b.mean[:3] - TRUTH_POS) < 1e-6

    def test_velocity_always_zero(self):
        m = exact_measurement(UAV_POSITIONS[0], 0)
        b = init_belief([m], PriorConfig(center=None))
        assert np.all(b.mean[3:] == 0.0)

    def test_bearing_ray_intersection(self):
        ms = []
        for i, p in enumerate(UAV_POSITIONS):
            m = exact_measurement(p, i)
            ms.append(Measurement(origin_id=i, origin_pose=m.origin_pose, step=0,
                                  azimuth=m.azimuth, elevation=m.elevation))
        b = init_belief(ms, PriorConfig(center=None), params=TINY)
        assert np.linalg.norm(b.mean[:3] - TRUTH_POS) < 1e-6


class TestPredict:
    def test_dt_zero_is_identity(self):
        b = Belief(np.arange(6.0), np.eye(6) * 2.0, step=3)
        out = predict(b, 0.0, MotionModel(q=0.7))
        assert np.allclose(out.mean, b.mean)
        assert np.allclose(out.covariance, b.covariance)

    def test_q_zero_pure_drift(self):
        C = np.diag([1.0, 2, 3, 4, 5, 6])
        b = Belief(np.zeros(6), C, step=0)
        out = predict(b, 1.0, MotionModel(q=0.0))
        F, _ = transition(1.0, 0.0)
        assert np.allclose(out.mean, 0.0)
        assert np.allclose(out.covariance, F @ C @ F.T)

    def test_velocity_shifts_position(self):
        mean = np.array([0.0, 0, 30, 1.5, 0, 0])
        out = predict(Belief(mean, np.eye(6)), 1.0, MotionModel(q=0.5))
        assert np.allclose(out.mean[:3], [1.5, 0, 30])
        # Process noise never shrinks the predicted spread.
        assert np.trace(out.covariance) >= np.trace(np.eye(6))


class TestUpdate:
    def test_empty_batch_is_identity(self):
        b = Belief(np.zeros(6), np.eye(6))
        out = update(b, [], RB, TINY)
        assert np.allclose(out.mean, b.mean)
        assert np.allclose(out.covariance, b.covariance)

    def test_scalar_linear_gaussian_matches_closed_form(self):
        # 1-D position, direct observation: conjugate Gaussian posterior.
        m0, s0, z, s = 2.0, 3.0, 4.4, 0.5
        mean, cov = kalman_update(np.array([m0]), np.array([[s0 ** 2]]),
                                  np.array([z]), np.array([m0]),
                                  np.array([[1.0]]), np.array([[s ** 2]]))
        var_post = 1.0 / (1.0 / s0 ** 2 + 1.0 / s ** 2)
        mean_post = var_post * (m0 / s0 ** 2 + z / s ** 2)
        assert mean[0] == pytest.approx(mean_post, abs=1e-12)
        assert cov[0, 0] == pytest.approx(var_post, abs=1e-12)

    def test_noiseless_triangulation(self):
        ms = [exact_measurement(p, i) for i, p in enumerate(UAV_POSITIONS)]
        oracle = triangulation_oracle(ms)
        assert np.linalg.norm(oracle - TRUTH_POS) < 1e-6
        prior_mean = np.concatenate([TRUTH_POS + [3.0, -2.0, 2.0], np.zeros(3)])
        b = Belief(prior_mean, np.diag([400.0] * 3 + [4.0] * 3))
        out = update(b, ms, RB, TINY)
        assert np.linalg.norm(out.mean[:3] - oracle) < 0.1

    def test_ukf_matches_truth_noiseless(self):
        ms = [exact_measurement(p, i) for i, p in enumerate(UAV_POSITIONS)]
        prior_mean = np.concatenate([TRUTH_POS + [3.0, -2.0, 2.0], np.zeros(3)])
        b = Belief(prior_mean, np.diag([400.0] * 3 + [4.0] * 3))
        out = update(b, ms, RB, TINY, kind="ukf")
        assert np.linalg.norm(out.mean[:3] - TRUTH_POS) < 0.1

    def test_covariance_stays_symmetric_psd(self):
        rng = np.random.default_rng(4)
        params = SensorParams(sigma0r=0.001, rcs=0.1)
        b = Belief(np.concatenate([TRUTH_POS, np.zeros(3)]),
                   np.diag([400.0] * 3 + [4.0] * 3))
        model = MotionModel(q=0.5)
        for k in range(50):
            b = predict(b, 1.0, model)
            ms = []
            for i, p in enumerate(UAV_POSITIONS):
                m = exact_measurement(p, i, truth_pos=TRUTH_POS + rng.normal(0, 5, 3))
                ms.append(m)
            b = update(b, ms, RB, params)
            C = b.covariance
            assert np.abs(C - C.T).max() < 1e-9
            assert np.linalg.eigvalsh(C).min() > -1e-9

    def test_information_monotone(self):
        params = SensorParams(sigma0r=0.001, rcs=0.1)
        b = Belief(np.concatenate([TRUTH_POS + 3.0, np.zeros(3)]),
                   np.diag([400.0] * 3 + [4.0] * 3))
        dets = [np.linalg.det(b.covariance[:3, :3])]
        for i, p in enumerate(UAV_POSITIONS):
            b = update(b, [exact_measurement(p, i)], RB, params)
            dets.append(np.linalg.det(b.covariance[:3, :3]))
        assert all(d1 <= d0 * (1 + 1e-12) for d0, d1 in zip(dets, dets[1:]))

    def test_same_age_order_robustness(self):
        ms = [exact_measurement(p, i) for i, p in enumerate(UAV_POSITIONS)]
        prior_mean = np.concatenate([TRUTH_POS + [3.0, -2.0, 2.0], np.zeros(3)])
        means = []
        for perm in itertools.permutations(ms):
            b = Belief(prior_mean.copy(), np.diag([400.0] * 3 + [4.0] * 3))
            means.append(update(b, list(perm), RB, TINY).mean)
        # update() re-sorts by (hop_age, origin_id); same-age permutations
        # therefore collapse to one canonical order.
        for m in means[1:]:
            assert np.linalg.norm(m[:3] - means[0][:3]) < 1e-6

    def test_hop_age_inflation_widens_posterior(self):
        params = SensorParams(sigma0r=0.001, rcs=0.1)
        m_fresh = exact_measurement(UAV_POSITIONS[0], 0)
        m_aged = Measurement(origin_id=0, origin_pose=m_fresh.origin_pose, step=0,
                             hop_age=3, range=m_fresh.range,
                             azimuth=m_fresh.azimuth, elevation=m_fresh.elevation)
        b = Belief(np.concatenate([TRUTH_POS, np.zeros(3)]),
                   np.diag([400.0] * 3 + [4.0] * 3))
        fresh = update(b, [m_fresh], RB, params, dt=1.0, q_age=1.0)
        aged = update(b, [m_aged], RB, params, dt=1.0, q_age=1.0)
        assert np.trace(aged.covariance[:3, :3]) > np.trace(fresh.covariance[:3, :3])


class TestEstimateAndNees:
    def test_estimate_returns_mean(self):
        b = Belief(np.arange(6.0), np.eye(6) * 9.0)
        assert np.array_equal(estimate(b), b.mean)
        # Covariance scaling leaves the point estimate untouched.
        b2 = Belief(b.mean, b.covariance * 100.0)
        assert np.array_equal(estimate(b2), estimate(b))

    def test_nees_zero_at_truth(self):
        t = TargetState(np.array([1.0, 2, 3]), np.array([0.5, 0, 0]), 0.0)
        b = Belief(t.state_vector(), np.eye(6))
        assert nees(b, t) == 0.0

    def test_nees_identity_metric(self):
        t = TargetState(np.array([1.0, 0, 0]), np.zeros(3), 0.0)
        b = Belief(np.zeros(6), np.eye(6))
        assert nees(b, t) == pytest.approx(1.0)

    def test_linear_gaussian_anees_in_chi2_band(self):
        # Exact linear Kalman filter on a matched NCV truth: NEES ~ chi2(6).
        runs, steps = 200, 25
        rng = np.random.default_rng(2024)
        F, Q = transition(1.0, 0.5)
        Lq = np.linalg.cholesky(Q + 1e-12 * np.eye(6))
        H = np.hstack([np.eye(3), np.zeros((3, 3))])
        R = np.eye(3) * 4.0
        P0 = np.diag([100.0] * 3 + [1.0] * 3)
        L0 = np.linalg.cholesky(P0)
        final = []
        for _ in range(runs):
            x = np.array([0.0, 0, 30, 1, 0.5, 0]) + L0 @ rng.standard_normal(6)
            b = Belief(np.array([0.0, 0, 30, 1, 0.5, 0]), P0.copy())
            for _ in range(steps):
                x = F @ x + Lq @ rng.standard_normal(6)
                b = predict(b, 1.0, MotionModel(q=0.5))
                z = H @ x + 2.0 * rng.standard_normal(3)
                mean, cov = kalman_update(b.mean, b.covariance, z, H @ b.mean, H, R)
                b = Belief(mean, cov, b.step)
            truth = TargetState(x[:3], x[3:], 0.0)
            final.append(nees(b, truth))
        anees = float(np.mean(final))
        lo = scipy.stats.chi2.ppf(0.005, 6 * runs) / runs
        hi = scipy.stats.chi2.ppf(0.995, 6 * runs) / runs
        assert lo < anees < hi
        assert 5.2 < anees < 6.9
