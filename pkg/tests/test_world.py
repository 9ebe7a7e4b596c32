import math

import numpy as np
import pytest

from drn.config import ScenarioConfig
from drn.world import (
    ConfigurationError,
    ConstraintViolation,
    KinematicConstraints,
    Obstacle,
    SimClock,
    TargetState,
    UavPose,
    apply_control,
    init_scenario,
    line_of_sight,
    sample_in_ball,
    step_target,
)


BOX = Obstacle(np.array([40.0, -10.0, 0.0]), np.array([60.0, 10.0, 100.0]))


def make_target(heading=0.0, speed=1.5, position=(0.0, 0.0, 30.0)):
    velocity = speed * np.array([math.cos(heading), math.sin(heading), 0.0])
    return TargetState(np.asarray(position, float), velocity, heading)


class TestInitScenario:
    def test_same_seed_is_bit_identical(self):
        cfg = ScenarioConfig()
        w1 = init_scenario(cfg, seed=42)
        w2 = init_scenario(cfg, seed=42)
        for a, b in zip(w1.uavs, w2.uavs):
            assert np.array_equal(a.position, b.position)

    def test_zero_radius_collapses_to_center(self):
        cfg = ScenarioConfig()
        cfg.world.uav_init_radius = 0.0
        w = init_scenario(cfg, seed=1)
        for u in w.uavs:
            assert np.array_equal(u.position, np.array([0.0, 0.0, 50.0]))

    def test_uniform_ball_mean_distance(self):
        # Mean distance from center of a uniform ball is 3R/4.
        rng = np.random.default_rng(7)
        center = np.array([0.0, 0.0, 50.0])
        samples = np.array([sample_in_ball(center, 30.0, rng) for _ in range(10_000)])
        dist = np.linalg.norm(samples - center, axis=1)
        assert dist.max() <= 30.0
        assert abs(dist.mean() - 22.5) / 22.5 < 0.02

    def test_zero_uavs_rejected(self):
        cfg = ScenarioConfig()
        cfg.fleet.n = 0
        with pytest.raises(ConfigurationError):
            init_scenario(cfg, seed=0)

    def test_degenerate_obstacle_rejected(self):
        with pytest.raises(ConfigurationError):
            Obstacle(np.array([0.0, 0.0, 0.0]), np.array([1.0, 0.0, 1.0]))


class TestLineOfSight:
    def test_no_obstacles(self):
        assert line_of_sight(np.zeros(3), np.array([100.0, 0, 0]), [])

    def test_segment_through_box_blocked(self):
        a = np.array([0.0, 0.0, 50.0])
        b = np.array([100.0, 0.0, 50.0])
        assert not line_of_sight(a, b, [BOX])

    def test_segment_over_box_clear(self):
        # Climbing endpoint exits the z=100 plane at x=25, before reaching
        # the box slab at x=40, so the interior is missed.
        a = np.array([0.0, 0.0, 50.0])
        b = np.array([100.0, 0.0, 250.0])
        assert line_of_sight(a, b, [BOX])

    def test_segment_through_box_top_blocked(self):
        # Shallower climb: z reaches 100 only at x=50, inside the x-slab.
        a = np.array([0.0, 0.0, 50.0])
        b = np.array([100.0, 0.0, 150.0])
        assert not line_of_sight(a, b, [BOX])

    def test_grazing_face_counts_as_los(self):
        # Segment lies exactly in the y=10 face plane: open interior missed.
        a = np.array([0.0, 10.0, 50.0])
        b = np.array([100.0, 10.0, 50.0])
        assert line_of_sight(a, b, [BOX])

    def test_symmetry_and_monotonicity(self):
        rng = np.random.default_rng(3)
        boxes = [BOX, Obstacle(np.array([-30.0, -30, 0]), np.array([-10.0, -10, 60]))]
        for _ in range(200):
            a = rng.uniform(-50, 120, 3)
            b = rng.uniform(-50, 120, 3)
            if np.allclose(a, b):
                continue
            one = line_of_sight(a, b, boxes[:1])
            assert one == line_of_sight(b, a, boxes[:1])
            # Adding an obstacle can only remove visibility.
            both = line_of_sight(a, b, boxes)
            assert not (one is False and both is True)


class TestStepTarget:
    def test_noiseless_straight_line(self):
        state = make_target(heading=0.0)
        rng = np.random.default_rng(0)
        nxt = step_target(state, SimClock(0, 1.0), rng, sigma_heading=0.0)
        assert np.allclose(nxt.position - state.position, [1.5, 0.0, 0.0])

    def test_100_noiseless_steps_travel_150m(self):
        state = make_target(heading=0.7)
        rng = np.random.default_rng(0)
        clock = SimClock(0, 1.0)
        start = state.position.copy()
        for _ in range(100):
            state = step_target(state, clock, rng, sigma_heading=0.0)
        assert np.linalg.norm(state.position - start) == pytest.approx(150.0, rel=1e-12)

    def test_speed_preserved_under_noise(self):
        state = make_target(heading=0.3)
        rng = np.random.default_rng(11)
        clock = SimClock(0, 1.0)
        for _ in range(10_000):
            state = step_target(state, clock, rng, sigma_heading=0.2, speed=1.5)
            speed = np.linalg.norm(state.velocity)
            assert abs(speed - 1.5) < 1e-9 * 1.5
            assert state.position[2] == 30.0
            assert -math.pi <= state.heading < math.pi


class TestApplyControl:
    constraints = KinematicConstraints(v_max=10.0)

    def test_zero_control_is_identity(self):
        pose = UavPose(0, np.array([1.0, 2.0, 50.0]))
        out = apply_control(pose, np.zeros(3), self.constraints, dt=1.0)
        assert np.array_equal(out.position, pose.position)

    def test_boundary_displacement_accepted(self):
        pose = UavPose(0, np.array([0.0, 0.0, 50.0]))
        u = np.array([10.0, 0.0, 0.0])
        out = apply_control(pose, u, self.constraints, dt=1.0)
        assert np.allclose(out.position, [10.0, 0.0, 50.0])

    def test_overspeed_rejected(self):
        pose = UavPose(0, np.array([0.0, 0.0, 50.0]))
        with pytest.raises(ConstraintViolation):
            apply_control(pose, np.array([10.1, 0.0, 0.0]), self.constraints, dt=1.0)

    def test_altitude_lock(self):
        pose = UavPose(0, np.array([0.0, 0.0, 50.0]), altitude_locked=True)
        with pytest.raises(ConstraintViolation):
            apply_control(pose, np.array([0.0, 0.0, 1.0]), self.constraints, dt=1.0)
