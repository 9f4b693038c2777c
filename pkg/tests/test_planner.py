import itertools
import math

import numpy as np
import pytest

from mtssrp.gaussian import GaussianModel, ModeBank
from mtssrp.monitor import MonitorState, initial_state, log_r_plus_one
from mtssrp.planner import (
    MAX_ENUMERATION,
    PlannerConfig,
    SamplingPlan,
    ThompsonDraws,
    draw_thompson,
    plan_exhaustive,
    plan_greedy,
    plan_random,
    plan_sort,
    sampled_objective,
    scores_from_draws,
    thompson_scores,
    top_modes,
)


def shift_bank(p, shifts):
    """Diagonal bank from a list of (coordinate -> shift) maps."""
    base = GaussianModel.standard(p)
    modes = []
    for spec in shifts:
        vec = np.zeros(p)
        for j, s in spec.items():
            vec[j] = s
        modes.append(base.shifted(vec))
    return ModeBank(base, modes)


def random_diagonal_bank(rng, p, K):
    base = GaussianModel.diagonal(rng.standard_normal(p), rng.uniform(0.5, 2.0, p))
    modes = [
        GaussianModel.diagonal(rng.standard_normal(p), rng.uniform(0.5, 2.0, p))
        for _ in range(K)
    ]
    return ModeBank(base, modes)


class TestTopModes:
    def test_orders_by_statistic(self):
        np.testing.assert_array_equal(top_modes(np.array([1.0, 3.0, 2.0]), 2), [1, 2])

    def test_ties_break_to_lowest_index(self):
        np.testing.assert_array_equal(top_modes(np.array([1.0, 1.0, 1.0]), 2), [0, 1])


class TestThompsonScores:
    def test_injected_draw_single_shift(self):
        bank = shift_bank(4, [{0: 0.5}])
        draws = ThompsonDraws(
            mode_indices=np.array([0]),
            draws=np.array([[0.9, 5.0, -3.0, 2.0]]),
        )
        scores = scores_from_draws(bank, draws)
        # oracle: delta*x - delta^2/2 on the shifted coordinate, 0 elsewhere
        assert scores[0] == pytest.approx(0.5 * 0.9 - 0.125, abs=1e-12)
        np.testing.assert_array_equal(scores[1:], 0.0)

    def test_zero_on_coordinates_shared_with_base(self):
        bank = shift_bank(6, [{1: 0.4}, {1: -0.3}])
        state = MonitorState(t=1, logstats=np.array([0.2, 0.1]))
        scores, _ = thompson_scores(state, bank, PlannerConfig(budget=2, top_k=2), np.random.default_rng(0))
        for j in (0, 2, 3, 4, 5):
            assert scores[j] == 0.0

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(21)
        bank = random_diagonal_bank(rng, 8, 3)
        state = MonitorState(t=2, logstats=np.array([0.5, 1.5, -0.2]))
        cfg = PlannerConfig(budget=3, top_k=2)
        s1, m1 = thompson_scores(state, bank, cfg, np.random.default_rng(99))
        s2, m2 = thompson_scores(state, bank, cfg, np.random.default_rng(99))
        np.testing.assert_array_equal(s1, s2)
        np.testing.assert_array_equal(m1, m2)

    def test_draws_come_from_leading_modes(self):
        bank = shift_bank(4, [{0: 0.5}, {1: 0.5}, {2: 0.5}])
        state = MonitorState(t=3, logstats=np.array([0.1, 2.0, 1.0]))
        draws = draw_thompson(state, bank, PlannerConfig(budget=1, top_k=2), np.random.default_rng(1))
        np.testing.assert_array_equal(draws.mode_indices, [1, 2])

    def test_refuses_full_covariance_bank(self):
        cov = np.array([[1.0, 0.3], [0.3, 1.0]])
        bank = ModeBank(GaussianModel.full([0, 0], cov), [GaussianModel.full([1, 0], cov)])
        state = initial_state(1)
        with pytest.raises(ValueError):
            thompson_scores(state, bank, PlannerConfig(budget=1), np.random.default_rng(0))


class TestPlanSort:
    def test_top_two_with_distinct_values(self):
        plan = plan_sort(np.array([0.3, 0.0, 0.9, 0.9]), 2)
        np.testing.assert_array_equal(plan.indices, [2, 3])

    def test_all_ties_take_lowest_indices(self):
        plan = plan_sort(np.zeros(5), 3)
        np.testing.assert_array_equal(plan.indices, [0, 1, 2])

    def test_full_budget_takes_everything(self):
        plan = plan_sort(np.array([1.0, -2.0, 0.5]), 3)
        np.testing.assert_array_equal(plan.indices, [0, 1, 2])

    def test_budget_exceeding_dimension_rejected(self):
        with pytest.raises(ValueError):
            plan_sort(np.zeros(3), 4)


class TestGreedy:
    def test_matches_sort_for_diagonal_banks(self):
        rng = np.random.default_rng(33)
        for _ in range(25):
            p = int(rng.integers(4, 12))
            K = int(rng.integers(1, 5))
            bank = random_diagonal_bank(rng, p, K)
            state = MonitorState(t=1, logstats=rng.standard_normal(K))
            cfg = PlannerConfig(budget=int(rng.integers(1, p + 1)), top_k=min(2, K))
            draws = draw_thompson(state, bank, cfg, rng)
            sort_plan = plan_sort(scores_from_draws(bank, draws), cfg.budget)
            greedy_plan = plan_greedy(state, bank, cfg, draws=draws)
            np.testing.assert_array_equal(sort_plan.indices, greedy_plan.indices)

    def test_single_budget_matches_exhaustive(self):
        rng = np.random.default_rng(35)
        bank = random_diagonal_bank(rng, 7, 3)
        state = MonitorState(t=1, logstats=np.array([0.3, -0.1, 0.8]))
        cfg = PlannerConfig(budget=1, top_k=2)
        draws = draw_thompson(state, bank, cfg, rng)
        greedy_plan = plan_greedy(state, bank, cfg, draws=draws)
        exhaustive_plan = plan_exhaustive(state, bank, cfg, draws=draws)
        np.testing.assert_array_equal(greedy_plan.indices, exhaustive_plan.indices)

    def test_greedy_first_pick_is_best_singleton(self):
        rng = np.random.default_rng(37)
        for _ in range(10):
            bank = random_diagonal_bank(rng, 6, 2)
            state = MonitorState(t=1, logstats=rng.standard_normal(2))
            cfg = PlannerConfig(budget=3, top_k=1)
            draws = draw_thompson(state, bank, cfg, rng)
            greedy_plan = plan_greedy(state, bank, cfg, draws=draws)
            best_single = plan_exhaustive(
                state, bank, PlannerConfig(budget=1, top_k=1), draws=draws
            )
            gains = scores_from_draws(bank, draws)
            first_pick = greedy_plan.indices[np.argmax(gains[greedy_plan.indices])]
            assert first_pick == best_single.indices[0]

    def test_correlated_greedy_never_beats_exhaustive(self):
        rng = np.random.default_rng(39)
        p = 6
        corr = 0.85
        cov = corr * np.ones((p, p)) + (1 - corr) * np.eye(p)
        base = GaussianModel.full(np.zeros(p), cov)
        mode = GaussianModel.full(np.array([1.0, 0.8, 0.0, 0.0, -0.9, 0.4]), cov)
        bank = ModeBank(base, [mode])
        found_suboptimal = False
        for trial in range(30):
            state = MonitorState(t=1, logstats=np.array([0.5]))
            cfg = PlannerConfig(budget=2, top_k=1)
            draws = draw_thompson(state, bank, cfg, np.random.default_rng(trial))
            greedy_plan = plan_greedy(state, bank, cfg, draws=draws)
            exhaustive_plan = plan_exhaustive(state, bank, cfg, draws=draws)
            g = sampled_objective(state, bank, draws, greedy_plan.indices)
            e = sampled_objective(state, bank, draws, exhaustive_plan.indices)
            assert g <= e + 1e-9
            if g < e - 1e-9:
                found_suboptimal = True
        # strong correlation should defeat greedy at least once
        assert found_suboptimal


class TestExhaustive:
    def test_full_budget_returns_everything(self):
        rng = np.random.default_rng(41)
        bank = random_diagonal_bank(rng, 4, 2)
        state = MonitorState(t=1, logstats=np.zeros(2))
        cfg = PlannerConfig(budget=4, top_k=1)
        plan = plan_exhaustive(state, bank, cfg, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(plan.indices, [0, 1, 2, 3])

    def test_matches_sort_for_diagonal(self):
        rng = np.random.default_rng(43)
        for _ in range(20):
            p = int(rng.integers(4, 13))
            K = int(rng.integers(1, 4))
            budget = int(rng.integers(1, min(4, p) + 1))
            bank = random_diagonal_bank(rng, p, K)
            state = MonitorState(t=1, logstats=rng.standard_normal(K))
            cfg = PlannerConfig(budget=budget, top_k=min(2, K))
            draws = draw_thompson(state, bank, cfg, rng)
            sort_plan = plan_sort(scores_from_draws(bank, draws), budget)
            exhaustive_plan = plan_exhaustive(state, bank, cfg, draws=draws)
            s = sampled_objective(state, bank, draws, sort_plan.indices)
            e = sampled_objective(state, bank, draws, exhaustive_plan.indices)
            assert s == e  # identical attained objective, zero tolerance

    def test_enumeration_guard(self):
        rng = np.random.default_rng(45)
        bank = random_diagonal_bank(rng, 50, 1)
        state = MonitorState(t=1, logstats=np.zeros(1))
        assert math.comb(50, 12) > MAX_ENUMERATION
        with pytest.raises(ValueError):
            plan_exhaustive(state, bank, PlannerConfig(budget=12), rng=rng)
        # C(5,2)=10 is comfortably inside the guard
        small = random_diagonal_bank(rng, 5, 1)
        plan = plan_exhaustive(
            MonitorState(t=1, logstats=np.zeros(1)),
            small,
            PlannerConfig(budget=2),
            rng=np.random.default_rng(2),
        )
        assert plan.size == 2


class TestPlanRandom:
    def test_full_budget(self):
        plan = plan_random(5, 5, np.random.default_rng(0))
        np.testing.assert_array_equal(plan.indices, np.arange(5))

    def test_seed_reproducibility(self):
        a = plan_random(20, 6, np.random.default_rng(7))
        b = plan_random(20, 6, np.random.default_rng(7))
        np.testing.assert_array_equal(a.indices, b.indices)

    def test_uniform_frequencies(self):
        rng = np.random.default_rng(49)
        n = 100_000
        counts = np.zeros(10)
        for _ in range(n):
            counts[plan_random(10, 1, rng).indices[0]] += 1
        freq = counts / n
        se = math.sqrt(0.1 * 0.9 / n)
        assert np.all(np.abs(freq - 0.1) < 3 * se + 1e-12)


class TestPlanInvariants:
    def test_budget_and_uniqueness_across_solvers(self):
        rng = np.random.default_rng(51)
        for seed in range(10):
            p, K, budget = 9, 3, 4
            bank = random_diagonal_bank(rng, p, K)
            state = MonitorState(t=1, logstats=rng.standard_normal(K))
            cfg = PlannerConfig(budget=budget, top_k=2)
            draws = draw_thompson(state, bank, cfg, np.random.default_rng(seed))
            plans = [
                plan_sort(scores_from_draws(bank, draws), budget),
                plan_greedy(state, bank, cfg, draws=draws),
                plan_exhaustive(state, bank, cfg, draws=draws),
                plan_random(p, budget, np.random.default_rng(seed)),
            ]
            for plan in plans:
                assert plan.size == budget
                assert len(np.unique(plan.indices)) == budget
                assert plan.indices[0] >= 0 and plan.indices[-1] < p

    def test_plan_validation(self):
        with pytest.raises(ValueError):
            SamplingPlan(indices=np.array([3, 1]))
        with pytest.raises(ValueError):
            SamplingPlan(indices=np.array([1, 1]))
        with pytest.raises(ValueError):
            PlannerConfig(budget=0)


class TestPerSensorReduction:
    def test_sampled_increment_matches_per_sensor_rule(self):
        """With one single-coordinate mode per sensor over an iid base, the
        sampled mode-level update reduces to the per-sensor rule: observed
        sensors gain the ratio at the draw, unobserved keep the bare +1."""
        rng = np.random.default_rng(53)
        p = 6
        delta = 0.7
        bank = shift_bank(p, [{j: delta} for j in range(p)])
        logstats = rng.standard_normal(p)
        state = MonitorState(t=4, logstats=logstats)
        draws = ThompsonDraws(
            mode_indices=np.arange(p), draws=np.tile(rng.standard_normal(p), (p, 1))
        )
        observed = np.array([1, 4])
        # mode-level sampled statistics for the candidate set
        unobs = [j for j in range(p) if j not in observed]
        for j in range(p):
            single = sampled_objective(
                MonitorState(t=4, logstats=np.array([logstats[j]])),
                ModeBank(bank.base, [bank.modes[j]]),
                ThompsonDraws(mode_indices=np.array([0]), draws=draws.draws[j : j + 1]),
                observed,
            )
            x = draws.draws[j][j]
            expected = float(log_r_plus_one(logstats[j]))
            if j in observed:
                expected += delta * x - 0.5 * delta**2
            assert single == pytest.approx(expected, abs=1e-12)
