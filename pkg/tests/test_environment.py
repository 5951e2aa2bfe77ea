"""Scenario geometry, source sampling, agent kinematics, observations."""

import math

import numpy as np
import pytest
from scipy import stats

from depf.environment import (
    EpisodeState,
    ProtocolError,
    make_scenario,
    observe,
    param_prior,
    sample_source,
    sample_start,
    step_agent,
)
from depf.plume import ConfigurationError, Pose, SensorNoise


class TestScenarioGeometry:
    def test_severe_prior_disjoint_from_true_region(self):
        sc = make_scenario("severe", "small")
        assert sc.prior_box.x_lo == 0 and sc.prior_box.x_hi == 20
        for box in sc.true_region:
            assert not sc.prior_box.intersects(box)
        # the two true boxes are the quoted corner band
        (b1, b2) = sc.true_region
        assert (b1.x_lo, b1.x_hi, b1.y_lo, b1.y_hi) == (15, 30, 20, 30)
        assert (b2.x_lo, b2.x_hi, b2.y_lo, b2.y_hi) == (20, 30, 15, 20)

    def test_no_error_true_region_inside_prior(self):
        sc = make_scenario("no_error", "small")
        (box,) = sc.true_region
        assert box.x_lo >= sc.prior_box.x_lo and box.x_hi <= sc.prior_box.x_hi
        assert box.y_lo >= sc.prior_box.y_lo and box.y_hi <= sc.prior_box.y_hi

    def test_moderate_partial_overlap(self):
        sc = make_scenario("moderate", "small")
        (box,) = sc.true_region
        # overlap is (10,20)^2: 100 of the 225 unit true region
        ox = min(box.x_hi, sc.prior_box.x_hi) - max(box.x_lo, sc.prior_box.x_lo)
        oy = min(box.y_hi, sc.prior_box.y_hi) - max(box.y_lo, sc.prior_box.y_lo)
        assert ox * oy == pytest.approx(100.0)
        assert box.area == pytest.approx(225.0)

    def test_small_scale_budget_and_domain(self):
        sc = make_scenario("no_error", "small")
        assert sc.domain == (30.0, 30.0)
        assert sc.step_budget == 100
        assert sc.success_radius == 1.0
        assert (sc.start_box.x_hi, sc.start_box.y_hi) == (5.0, 5.0)

    def test_large_scale_is_times_ten(self):
        small = make_scenario("severe", "small")
        large = make_scenario("severe", "large")
        assert large.domain == (300.0, 300.0)
        assert large.step_budget == 300
        assert large.success_radius == 10.0
        for bs, bl in zip(small.true_region, large.true_region):
            assert bl.x_lo == 10 * bs.x_lo and bl.y_hi == 10 * bs.y_hi

    def test_unknown_names_rejected(self):
        with pytest.raises(ConfigurationError):
            make_scenario("mystery", "small")
        with pytest.raises(ConfigurationError):
            make_scenario("severe", "medium")


class TestSampleSource:
    def test_severe_never_in_prior(self):
        sc = make_scenario("severe", "small")
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            th = sample_source(sc, rng)
            assert not (0 <= th.x_s <= 20 and 0 <= th.y_s <= 20)

    def test_strength_always_in_range(self):
        sc = make_scenario("moderate", "small")
        rng = np.random.default_rng(1)
        qs = [sample_source(sc, rng).q_s for _ in range(2000)]
        assert min(qs) >= 10.0 and max(qs) <= 3000.0

    def test_severe_area_weighting(self):
        # Region areas 150 and 50: box-1 frequency 0.75 +- 0.015.
        sc = make_scenario("severe", "small")
        rng = np.random.default_rng(2)
        n = 10_000
        in_box1 = 0
        for _ in range(n):
            th = sample_source(sc, rng)
            if 15 <= th.x_s <= 30 and 20 <= th.y_s <= 30:
                in_box1 += 1
        assert in_box1 / n == pytest.approx(0.75, abs=0.015)

    @pytest.mark.slow
    def test_marginals_pass_ks(self):
        sc = make_scenario("no_error", "small")
        rng = np.random.default_rng(3)
        draws = np.array(
            [sample_source(sc, rng).as_array() for _ in range(10_000)]
        )
        checks = [
            (2, stats.uniform(10, 2990)),
            (3, stats.uniform(0, 6)),
            (4, stats.uniform(0, 2 * math.pi)),
            (5, stats.uniform(1, 4)),
            (6, stats.uniform(0.5, 7.5)),
        ]
        for dim, dist in checks:
            p = stats.kstest(draws[:, dim], dist.cdf).pvalue
            assert p > 0.01, f"dimension {dim} failed KS: p={p}"

    def test_param_prior_matches_scenario(self):
        sc = make_scenario("severe", "small")
        prior = param_prior(sc)
        assert prior.lower[0] == 0.0 and prior.upper[0] == 20.0
        assert prior.lower[2] == 10.0 and prior.upper[2] == 3000.0


class TestStepAgent:
    def make_state(self, x, y, scenario=None):
        sc = scenario or make_scenario("no_error", "small")
        rng = np.random.default_rng(0)
        return EpisodeState(true_theta=sample_source(sc, rng), pose=Pose(x, y)), sc

    def test_unit_move_east(self):
        state, sc = self.make_state(5.0, 5.0)
        out = step_agent(state, (1.0, 0.0), sc)
        assert (out.pose.x, out.pose.y) == (6.0, 5.0)
        assert out.distance_traveled == pytest.approx(1.0)
        assert out.step == 1

    def test_clamped_at_wall_adds_no_distance(self):
        state, sc = self.make_state(30.0, 12.0)
        out = step_agent(state, (1.0, 0.0), sc)
        assert (out.pose.x, out.pose.y) == (30.0, 12.0)
        assert out.distance_traveled == 0.0

    def test_diagonal_is_unit_length(self):
        state, sc = self.make_state(0.0, 0.0)
        s = math.sqrt(0.5)
        out = step_agent(state, (s, s), sc)
        assert out.pose.x == pytest.approx(s)
        assert out.pose.y == pytest.approx(s)
        assert out.distance_traveled == pytest.approx(1.0)

    def test_never_moves_more_than_unit(self):
        rng = np.random.default_rng(4)
        state, sc = self.make_state(15.0, 15.0)
        from depf.planners import ACTIONS

        total = 0.0
        for _ in range(50):
            a = ACTIONS[int(rng.integers(0, 8))]
            new = step_agent(state, a, sc)
            moved = math.hypot(new.pose.x - state.pose.x, new.pose.y - state.pose.y)
            assert moved <= 1.0 + 1e-12
            total += moved
            state = new
        assert state.distance_traveled == pytest.approx(total)

    def test_past_budget_rejected(self):
        state, sc = self.make_state(5.0, 5.0)
        state.step = sc.step_budget
        with pytest.raises(ProtocolError):
            step_agent(state, (1.0, 0.0), sc)


class TestObserve:
    def test_observation_carries_pose_and_reading(self):
        sc = make_scenario("no_error", "small")
        rng = np.random.default_rng(5)
        state = EpisodeState(true_theta=sample_source(sc, rng), pose=Pose(3.0, 4.0))
        obs = observe(state, SensorNoise(), rng)
        assert obs.pose == Pose(3.0, 4.0)
        assert math.isfinite(obs.z)

    def test_start_pose_inside_start_box(self):
        sc = make_scenario("moderate", "small")
        rng = np.random.default_rng(6)
        for _ in range(100):
            p = sample_start(sc, rng)
            assert 0 <= p.x <= 5 and 0 <= p.y <= 5
