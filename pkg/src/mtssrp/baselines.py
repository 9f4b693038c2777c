"""Per-sensor comparator policies for the benchmark tables.

These monitor each data stream individually (no failure-mode knowledge in
the statistics) and fuse by a top-r sum. Isolation, where the benchmark
asks for it, maps per-sensor evidence onto the candidate modes post hoc by
summing statistics over each mode's support.
"""

from __future__ import annotations

import numpy as np

from .gaussian import ModeBank, as_generator
from .monitor import LOG_ZERO, log_r_plus_one
from .planner import SamplingPlan, plan_random


def _top_r_sum(stats: np.ndarray, r: int) -> float:
    if r >= stats.shape[0]:
        return float(stats.sum())
    return float(np.partition(stats, stats.shape[0] - r)[-r:].sum())


def _top_indices(scores: np.ndarray, budget: int) -> np.ndarray:
    return np.sort(np.argsort(-scores, kind="stable")[:budget])


def support_isolation(stats: np.ndarray, bank: ModeBank) -> int:
    """Map per-sensor statistics to a mode: largest support sum wins."""
    totals = np.array([stats[sup].sum() for sup in bank.mode_supports()])
    return int(np.argmax(totals))


def tssrp_step(
    logstats: np.ndarray,
    indices: np.ndarray,
    values: np.ndarray,
    base_mean: np.ndarray,
    base_var: np.ndarray,
    shift: float,
    budget: int,
    rng,
):
    """One tick of the per-sensor sampled-ratio procedure.

    Observed sensors multiply (R+1) by the single-stream likelihood ratio
    of a mean shift; unobserved sensors keep the bare +1 drift. The next
    plan takes the top-`budget` hypothetically updated statistics, each
    evaluated at a draw from its own shifted alternative.

    Returns (updated logstats, next SamplingPlan).
    """
    rng = as_generator(rng)
    drifted = log_r_plus_one(logstats)
    if len(indices):
        idx = np.asarray(indices, dtype=np.intp)
        vals = np.asarray(values, dtype=np.float64)
        drifted[idx] += _shift_llr(vals, base_mean[idx], base_var[idx], shift)
    sampled = base_mean + shift + np.sqrt(base_var) * rng.standard_normal(base_mean.shape[0])
    sampled_stats = log_r_plus_one(drifted) + _shift_llr(sampled, base_mean, base_var, shift)
    plan = SamplingPlan(indices=_top_indices(sampled_stats, budget), solver="sort")
    return drifted, plan


def _shift_llr(x, mean, var, shift):
    """log N(x; mean+shift, var) - log N(x; mean, var), elementwise."""
    centered = x - mean
    return (shift * centered - 0.5 * shift * shift) / var


def tras_step(
    w_pos: np.ndarray,
    w_neg: np.ndarray,
    indices: np.ndarray,
    values: np.ndarray,
    base_mean: np.ndarray,
    base_var: np.ndarray,
    allowance: float,
    compensation: float,
    budget: int,
    rng,
    explore_fraction: float = 0.0,
):
    """One tick of the top-r adaptive-sampling comparator.

    Observed sensors run a standardised two-sided cumulative-sum update
    (each arm drifts down by `allowance` under control and resets at 0);
    unobserved sensors gain `compensation` on both arms so neglected
    streams eventually float into the observed set. The next plan takes
    the top-`budget` per-sensor statistics, optionally mixing in a random
    exploration fraction.

    Returns (w_pos, w_neg, next SamplingPlan).
    """
    rng = as_generator(rng)
    p = w_pos.shape[0]
    new_pos = w_pos + compensation
    new_neg = w_neg + compensation
    if len(indices):
        idx = np.asarray(indices, dtype=np.intp)
        z = (np.asarray(values, dtype=np.float64) - base_mean[idx]) / np.sqrt(base_var[idx])
        new_pos[idx] = np.maximum(0.0, w_pos[idx] + z - allowance)
        new_neg[idx] = np.maximum(0.0, w_neg[idx] - z - allowance)
    stats = np.maximum(new_pos, new_neg)
    n_explore = int(round(explore_fraction * budget))
    if n_explore > 0:
        explore = rng.choice(p, size=n_explore, replace=False)
        ranking = np.argsort(-stats, kind="stable")
        fill = ranking[~np.isin(ranking, explore)][: budget - n_explore]
        chosen = np.sort(np.concatenate([explore, fill]))
    else:
        chosen = _top_indices(stats, budget)
    return new_pos, new_neg, SamplingPlan(indices=chosen, solver="sort")


class _PerSensorPolicy:
    """Shared plumbing: per-sensor statistic vector + top-r alarm sum."""

    def __init__(self, bank: ModeBank, budget: int, top_r: int, rng):
        if not bank.base.is_diagonal:
            raise ValueError("per-sensor policies require a diagonal base model")
        self.bank = bank
        self.base_mean = bank.base.mean
        self.base_var = bank.base.variances
        self.budget = budget
        self.top_r = top_r
        self.rng = as_generator(rng)

    def isolate(self) -> int:
        return support_isolation(self._stats(), self.bank)

    def statistic(self) -> float:
        return _top_r_sum(self._stats(), self.top_r)


class TssrpPolicy(_PerSensorPolicy):
    """Per-sensor sampled-ratio monitoring with adaptive top-q planning."""

    name = "tssrp"

    def __init__(self, bank: ModeBank, budget: int, shift: float, top_r: int | None = None, rng=None):
        super().__init__(bank, budget, top_r if top_r is not None else budget, rng)
        self.shift = float(shift)
        self.logstats = np.full(bank.dim, LOG_ZERO)
        self._next_plan = None

    def plan(self) -> np.ndarray:
        if self._next_plan is None:
            # before any data every statistic ties; sample a first layout
            sampled = self.base_mean + self.shift + np.sqrt(self.base_var) * self.rng.standard_normal(
                self.bank.dim
            )
            scores = _shift_llr(sampled, self.base_mean, self.base_var, self.shift)
            self._next_plan = SamplingPlan(indices=_top_indices(scores, self.budget), solver="sort")
        return self._next_plan.indices

    def update(self, t: int, indices: np.ndarray, values: np.ndarray):
        self.logstats, self._next_plan = tssrp_step(
            self.logstats,
            indices,
            values,
            self.base_mean,
            self.base_var,
            self.shift,
            self.budget,
            self.rng,
        )

    def _stats(self) -> np.ndarray:
        return self.logstats


class RandomPolicy(TssrpPolicy):
    """Per-sensor monitoring with uniformly random index sets; the
    no-adaptivity floor of the benchmark."""

    name = "random"

    def plan(self) -> np.ndarray:
        plan = plan_random(self.bank.dim, self.budget, self.rng)
        self._next_plan = plan
        return plan.indices

    def update(self, t: int, indices: np.ndarray, values: np.ndarray):
        drifted = log_r_plus_one(self.logstats)
        if len(indices):
            idx = np.asarray(indices, dtype=np.intp)
            vals = np.asarray(values, dtype=np.float64)
            drifted[idx] += _shift_llr(vals, self.base_mean[idx], self.base_var[idx], self.shift)
        self.logstats = drifted


class TrasPolicy(_PerSensorPolicy):
    """Two-sided cumulative-sum streams with a compensation drift for the
    unobserved, fused by a top-r sum."""

    name = "tras"

    def __init__(
        self,
        bank: ModeBank,
        budget: int,
        allowance: float,
        compensation: float | None = None,
        top_r: int | None = None,
        explore_fraction: float = 0.0,
        rng=None,
    ):
        super().__init__(bank, budget, top_r if top_r is not None else budget, rng)
        if allowance <= 0:
            raise ValueError("allowance must be > 0")
        self.allowance = float(allowance)
        self.compensation = float(compensation) if compensation is not None else 0.5 * allowance
        if self.compensation < 0:
            raise ValueError("compensation must be >= 0")
        self.explore_fraction = float(explore_fraction)
        self.w_pos = np.zeros(bank.dim)
        self.w_neg = np.zeros(bank.dim)
        self._next_plan = None

    def plan(self) -> np.ndarray:
        if self._next_plan is None:
            # all statistics tie at zero before data; start uniformly
            self._next_plan = plan_random(self.bank.dim, self.budget, self.rng)
        return self._next_plan.indices

    def update(self, t: int, indices: np.ndarray, values: np.ndarray):
        self.w_pos, self.w_neg, self._next_plan = tras_step(
            self.w_pos,
            self.w_neg,
            indices,
            values,
            self.base_mean,
            self.base_var,
            self.allowance,
            self.compensation,
            self.budget,
            self.rng,
            self.explore_fraction,
        )

    def _stats(self) -> np.ndarray:
        return np.maximum(self.w_pos, self.w_neg)
