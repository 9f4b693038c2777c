import math

import numpy as np
import pytest

from mtssrp.calibrate import (
    CalibrationError,
    CalibrationSpec,
    NullCrossingEnsemble,
    bisect_threshold,
    estimate_arl0,
    initial_bracket,
)
from mtssrp.gaussian import GaussianModel, ModeBank
from mtssrp.policies import MtssrpPolicy
from mtssrp.scenarios import ScenarioSpec, StreamGenerator, bank_for


def toy_factories(p=4, K=2, delta=0.8, budget=None, top_k=1):
    spec = ScenarioSpec(kind="nonoverlap", p=p, K=K, delta=delta, change_time=None)
    bank = bank_for(spec)
    budget = budget if budget is not None else p

    def make_policy(rng):
        return MtssrpPolicy(bank, budget=budget, top_k=top_k, rng=rng)

    def make_generator(rng):
        return StreamGenerator(spec, bank, rng, record_detail=False)

    return make_policy, make_generator, bank


class TestInitialBracket:
    def test_reference_values(self):
        low, high = initial_bracket(50, 200.0)
        assert high == pytest.approx(math.log(10_000), abs=1e-12)  # 9.2103
        assert low == pytest.approx(math.log(20.0), abs=1e-12)

    def test_unit_case(self):
        _, high = initial_bracket(1, math.e)
        assert high == pytest.approx(1.0, abs=1e-12)

    def test_monotone_in_modes_and_target(self):
        _, h1 = initial_bracket(10, 100.0)
        _, h2 = initial_bracket(20, 100.0)
        _, h3 = initial_bracket(10, 200.0)
        assert h2 > h1 and h3 > h1

    def test_rejects_degenerate_inputs(self):
        with pytest.raises(ValueError):
            initial_bracket(0, 100.0)
        with pytest.raises(ValueError):
            initial_bracket(5, 1.0)


class TestEstimateArl0:
    def test_very_low_threshold_alarms_immediately(self):
        make_policy, make_generator, _ = toy_factories()
        est = estimate_arl0(make_policy, make_generator, -1e9, replications=50, horizon=100, seed=0)
        assert est.mean == 1.0 and est.censor_rate == 0.0

    def test_seed_reproducibility(self):
        make_policy, make_generator, _ = toy_factories()
        a = estimate_arl0(make_policy, make_generator, 3.0, replications=100, horizon=600, seed=7)
        b = estimate_arl0(make_policy, make_generator, 3.0, replications=100, horizon=600, seed=7)
        assert a == b

    def test_all_censored_raises(self):
        make_policy, make_generator, _ = toy_factories()
        with pytest.raises(CalibrationError):
            estimate_arl0(make_policy, make_generator, 1e9, replications=20, horizon=50, seed=1)

    def test_censoring_is_flagged(self):
        make_policy, make_generator, _ = toy_factories()
        est = estimate_arl0(make_policy, make_generator, 8.0, replications=40, horizon=60, seed=2)
        assert est.censor_rate > 0.01 and est.censored


class TestCommonRandomNumbers:
    def test_pathwise_monotone_in_threshold(self):
        make_policy, make_generator, _ = toy_factories()
        ensemble = NullCrossingEnsemble(make_policy, make_generator, 80, horizon=800, seed=3)
        thresholds = [0.5, 1.5, 2.5, 3.5, 4.5]
        ensemble.advance(max(thresholds))
        previous = None
        for a in thresholds:
            times, _ = ensemble.stopping_times(a)
            if previous is not None:
                assert np.all(times >= previous)
            previous = times

    def test_lazy_advancement_is_consistent(self):
        make_policy, make_generator, _ = toy_factories()
        lazy = NullCrossingEnsemble(make_policy, make_generator, 40, horizon=400, seed=4)
        eager = NullCrossingEnsemble(make_policy, make_generator, 40, horizon=400, seed=4)
        eager.advance(5.0)
        for a in (1.0, 3.0, 5.0):  # query upward, advancing piecemeal
            t_lazy, c_lazy = lazy.stopping_times(a)
            t_eager, c_eager = eager.stopping_times(a)
            np.testing.assert_array_equal(t_lazy, t_eager)
            np.testing.assert_array_equal(c_lazy, c_eager)


class TestBisection:
    def test_converges_to_tolerance(self):
        make_policy, make_generator, bank = toy_factories()
        spec = CalibrationSpec(target_arl=50.0, replications=600, tolerance=0.05)
        result = bisect_threshold(spec, make_policy, make_generator, seed=5, num_modes=bank.K)
        assert result.converged
        assert abs(result.achieved_arl - 50.0) <= 0.05 * 50.0
        assert result.censor_rate <= 0.01
        assert result.replications == 600

    def test_fresh_seed_confirmation(self):
        make_policy, make_generator, bank = toy_factories()
        spec = CalibrationSpec(target_arl=50.0, replications=800, tolerance=0.05)
        result = bisect_threshold(spec, make_policy, make_generator, seed=6, num_modes=bank.K)
        fresh = estimate_arl0(
            make_policy,
            make_generator,
            result.threshold,
            replications=800,
            horizon=spec.horizon,
            seed=999,
        )
        # tolerance plus Monte Carlo noise of the two estimates combined
        margin = 0.05 * 50.0 + 3 * math.hypot(result.standard_error, fresh.standard_error)
        assert abs(fresh.mean - 50.0) <= margin

    def test_scalar_change_statistic_cross_check(self):
        """Single-mode full-observation case against an independent scalar
        simulator of the multiplicative recursion."""
        p, delta = 3, 0.7
        make_policy, make_generator, bank = toy_factories(p=p, K=1, delta=delta)
        spec = CalibrationSpec(target_arl=40.0, replications=800, tolerance=0.05)
        result = bisect_threshold(spec, make_policy, make_generator, seed=8, num_modes=1)

        rng = np.random.default_rng(1234)
        shift = bank.modes[0].mean - bank.base.mean
        times = []
        for _ in range(800):
            r = 0.0
            t = 0
            while t < spec.horizon:
                t += 1
                x = rng.standard_normal(p)
                llr = float(shift @ x - 0.5 * shift @ shift)
                r = (r + 1.0) * math.exp(llr)
                if r > 0 and math.log(r) >= result.threshold:
                    break
            times.append(t)
        oracle_mean = float(np.mean(times))
        oracle_se = float(np.std(times, ddof=1) / math.sqrt(len(times)))
        margin = 3 * math.hypot(result.standard_error, oracle_se)
        assert abs(result.achieved_arl - oracle_mean) <= margin

    def test_lower_bound_holds_at_calibrated_threshold(self):
        # mean null run length is at least exp(threshold) / K
        make_policy, make_generator, bank = toy_factories(p=8, K=4, budget=4)
        spec = CalibrationSpec(target_arl=50.0, replications=600, tolerance=0.05)
        result = bisect_threshold(spec, make_policy, make_generator, seed=9, num_modes=bank.K)
        bound = math.exp(result.threshold) / bank.K
        assert result.achieved_arl >= bound - 3 * result.standard_error

    def test_bracket_expansion_failure_raises(self):
        make_policy, make_generator, bank = toy_factories()
        spec = CalibrationSpec(
            target_arl=50.0, replications=30, bracket=(100.0, 101.0), max_iterations=3
        )
        with pytest.raises(CalibrationError):
            bisect_threshold(
                spec, make_policy, make_generator, seed=10, num_modes=bank.K, max_expansions=1
            )

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            CalibrationSpec(target_arl=50.0, tolerance=0.6)
        with pytest.raises(ValueError):
            CalibrationSpec(target_arl=50.0, max_horizon=100)
        with pytest.raises(ValueError):
            CalibrationSpec(target_arl=0.5)
