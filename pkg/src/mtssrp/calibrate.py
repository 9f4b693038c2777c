"""Control-limit calibration: find the threshold whose in-control average
run length hits a target, by bisection over Monte Carlo estimates.

All candidate thresholds are evaluated on one shared set of simulated
null trajectories (common random numbers): each replication records the
running record values of its alarm statistic, so the stopping time at any
threshold is a lookup, is pathwise nondecreasing in the threshold, and
the replication is only ever advanced as far as the largest threshold
queried so far. Stopping times are integers, so aggregate means are exact
and independent of evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CalibrationSpec:
    target_arl: float
    replications: int = 500
    max_horizon: int | None = None  # default 20x target
    tolerance: float = 0.05
    bracket: tuple[float, float] | None = None
    max_iterations: int = 20

    def __post_init__(self):
        if self.target_arl <= 1:
            raise ValueError("target_arl must be > 1")
        if not 0 < self.tolerance < 0.5:
            raise ValueError("tolerance must lie in (0, 0.5)")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.max_horizon is not None and self.max_horizon < 10 * self.target_arl:
            raise ValueError("max_horizon must be at least 10x the target")
        if self.bracket is not None and self.bracket[0] >= self.bracket[1]:
            raise ValueError("bracket must be ordered (low, high)")

    @property
    def horizon(self) -> int:
        if self.max_horizon is not None:
            return int(self.max_horizon)
        return int(math.ceil(20 * self.target_arl))


@dataclass(frozen=True)
class ArlEstimate:
    mean: float
    standard_error: float
    censor_rate: float
    replications: int

    @property
    def censored(self) -> bool:
        return self.censor_rate > 0.01


@dataclass(frozen=True)
class CalibrationResult:
    threshold: float
    achieved_arl: float
    standard_error: float
    iterations: int
    converged: bool
    censor_rate: float
    replications: int
    horizon: int


def initial_bracket(num_modes: int, target_arl: float, lower_divisor: float = 10.0):
    """Log-scale search bracket for the control limit.

    The in-control mean run length at threshold a is at least e^a / K, so
    a = log(K * target) can only overshoot the target; it caps the search.
    No comparable closed form exists below, so the lower end starts a
    conservative factor under log(target) and is expanded on demand.
    """
    if num_modes < 1 or target_arl <= 1:
        raise ValueError("need num_modes >= 1 and target_arl > 1")
    high = math.log(num_modes * target_arl)
    low = math.log(max(1.0, target_arl / lower_divisor))
    if low >= high:
        low = high - 1.0
    return low, high


class _NullRep:
    """One live null replication: the policy/generator pair plus the
    record values of its alarm statistic so far."""

    __slots__ = ("policy", "gen", "t", "running_max", "times", "values", "exhausted")

    def __init__(self, policy, gen):
        self.policy = policy
        self.gen = gen
        self.t = 0
        self.running_max = -np.inf
        self.times: list[int] = []
        self.values: list[float] = []
        self.exhausted = False


class NullCrossingEnsemble:
    """Lazily advanced pool of null replications sharing one seed root.

    first_crossing(threshold) is exact for any threshold at or below the
    largest one the ensemble has been advanced to.
    """

    def __init__(self, make_policy, make_generator, replications: int, horizon: int, seed):
        root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self.reps = []
        for child in root.spawn(replications):
            data_ss, policy_ss = child.spawn(2)
            gen = make_generator(np.random.default_rng(data_ss))
            policy = make_policy(np.random.default_rng(policy_ss))
            self.reps.append(_NullRep(policy, gen))
        self.horizon = int(horizon)
        self._advanced_to = -np.inf

    def advance(self, threshold: float):
        if threshold <= self._advanced_to:
            return
        for rep in self.reps:
            while not rep.exhausted and rep.running_max < threshold:
                rep.t += 1
                idx = rep.policy.plan()
                vals = rep.gen.observe(rep.t, idx)
                rep.policy.update(rep.t, idx, vals)
                stat = rep.policy.statistic()
                if stat > rep.running_max:
                    rep.running_max = stat
                    rep.times.append(rep.t)
                    rep.values.append(stat)
                if rep.t >= self.horizon:
                    rep.exhausted = True
        self._advanced_to = threshold

    def stopping_times(self, threshold: float):
        """Integer stopping times at the threshold, with a censor mask for
        replications that never crossed within the horizon."""
        self.advance(threshold)
        times = np.empty(len(self.reps), dtype=np.int64)
        censored = np.zeros(len(self.reps), dtype=bool)
        for i, rep in enumerate(self.reps):
            pos = np.searchsorted(np.asarray(rep.values), threshold, side="left")
            if pos < len(rep.values):
                times[i] = rep.times[pos]
            else:
                times[i] = self.horizon
                censored[i] = True
        return times, censored

    def arl_at(self, threshold: float) -> ArlEstimate:
        times, censored = self.stopping_times(threshold)
        n = times.shape[0]
        total = int(times.sum())
        total_sq = int(np.sum(times * times))
        mean = total / n
        var = max(0.0, (total_sq - n * mean * mean) / max(1, n - 1))
        return ArlEstimate(
            mean=mean,
            standard_error=math.sqrt(var / n),
            censor_rate=float(censored.mean()),
            replications=n,
        )


def estimate_arl0(
    make_policy, make_generator, threshold: float, replications: int, horizon: int, seed
) -> ArlEstimate:
    """Monte Carlo in-control ARL at a fixed threshold. Censored runs
    count at the horizon (a downward bias), flagged via censor_rate."""
    ensemble = NullCrossingEnsemble(make_policy, make_generator, replications, horizon, seed)
    est = ensemble.arl_at(threshold)
    if est.censor_rate >= 1.0:
        raise CalibrationError("every replication censored; raise the horizon or lower the threshold")
    return est


def bisect_threshold(
    spec: CalibrationSpec,
    make_policy,
    make_generator,
    seed,
    num_modes: int,
    max_expansions: int = 5,
    max_horizon_retries: int = 2,
) -> CalibrationResult:
    """Bisection on the threshold; the empirical ARL is nondecreasing in
    the threshold on the shared trajectories, so the search is stable even
    at modest replication counts."""
    target = spec.target_arl
    horizon = spec.horizon
    attempt = 0
    while True:
        ensemble = NullCrossingEnsemble(
            make_policy, make_generator, spec.replications, horizon, seed
        )
        low, high = spec.bracket if spec.bracket is not None else initial_bracket(num_modes, target)

        width = high - low
        expansions = 0
        while ensemble.arl_at(low).mean >= target:
            low -= width
            width *= 2.0
            expansions += 1
            if expansions > max_expansions:
                raise CalibrationError("lower bracket expansion failed")
        width = high - low
        expansions = 0
        while ensemble.arl_at(high).mean <= target:
            high += width
            width *= 2.0
            expansions += 1
            if expansions > max_expansions:
                raise CalibrationError("upper bracket expansion failed")

        best = None
        best_err = np.inf
        converged = False
        iterations = 0
        for iterations in range(1, spec.max_iterations + 1):
            mid = 0.5 * (low + high)
            est = ensemble.arl_at(mid)
            err = abs(est.mean - target)
            if err < best_err:
                best, best_err = (mid, est), err
            if err <= spec.tolerance * target:
                converged = True
                break
            if est.mean < target:
                low = mid
            else:
                high = mid

        threshold, est = best
        if est.censored and attempt < max_horizon_retries:
            attempt += 1
            horizon *= 2
            continue
        return CalibrationResult(
            threshold=float(threshold),
            achieved_arl=est.mean,
            standard_error=est.standard_error,
            iterations=iterations,
            converged=converged,
            censor_rate=est.censor_rate,
            replications=est.replications,
            horizon=horizon,
        )
