"""Choosing which q sensors to observe next.

The planner scores candidate index sets by a sampled surrogate of the
next-tick reward: draw one hypothetical full observation from each of the
currently leading failure modes, then ask which q coordinates would grow
the summed statistics of those modes fastest if the draws were real. For
independent (diagonal) banks the optimum is an exact per-coordinate sort;
for correlated banks a greedy forward selection approximates it, with
exhaustive enumeration kept as the test oracle.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .gaussian import (
    LOG_TWO_PI,
    GaussianModel,
    ModeBank,
    as_generator,
    per_coordinate_llr,
    sample_mode,
)
from .monitor import MonitorState, log_r_plus_one

MAX_ENUMERATION = 1_000_000

SOLVERS = ("sort", "greedy", "exhaustive", "random", "fixed")


@dataclass(frozen=True)
class SamplingPlan:
    """The index set to observe at the next tick."""

    indices: np.ndarray
    solver: str = "fixed"

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp).reshape(-1)
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0):
            raise ValueError("plan indices must be strictly increasing and non-negative")
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver tag {self.solver!r}")
        idx.flags.writeable = False
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return self.indices.shape[0]


@dataclass(frozen=True)
class PlannerConfig:
    """budget = sensors observable per tick; top_k = how many leading
    modes contribute to the sampled reward."""

    budget: int
    top_k: int = 1
    solver: str = "sort"

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.solver not in ("sort", "greedy", "exhaustive"):
            raise ValueError(f"unknown planner solver {self.solver!r}")


@dataclass(frozen=True)
class ThompsonDraws:
    """One hypothetical observation per selected mode, fixed for the whole
    of one tick's optimisation so every solver scores the same draws."""

    mode_indices: np.ndarray  # (top_k,) modes the draws came from
    draws: np.ndarray  # (top_k, p)


def top_modes(logstats: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest statistics, ties broken by lowest index."""
    order = np.argsort(-logstats, kind="stable")
    return order[:k]


def draw_thompson(state: MonitorState, bank: ModeBank, cfg: PlannerConfig, rng) -> ThompsonDraws:
    rng = as_generator(rng)
    k = min(cfg.top_k, bank.K)
    chosen = top_modes(state.logstats, k)
    draws = np.empty((k, bank.dim))
    for i, mode in enumerate(chosen):
        draws[i] = sample_mode(bank, int(mode), rng)
    return ThompsonDraws(mode_indices=chosen, draws=draws)


def scores_from_draws(bank: ModeBank, draws: ThompsonDraws) -> np.ndarray:
    """Per-sensor scores s_j: summed per-coordinate log-likelihood ratios
    of each drawn mode at its own draw. Requires a diagonal bank, where
    the sampled reward decomposes coordinate by coordinate."""
    if not bank.is_diagonal:
        raise ValueError("per-sensor scores require a diagonal bank; use the greedy solver")
    scores = np.zeros(bank.dim)
    for i, mode in enumerate(draws.mode_indices):
        scores += per_coordinate_llr(bank, int(mode), draws.draws[i])
    return scores


def thompson_scores(state: MonitorState, bank: ModeBank, cfg: PlannerConfig, rng):
    """Draw from the leading modes and score every sensor.

    Returns (scores, mode_indices); deterministic given the generator.
    """
    draws = draw_thompson(state, bank, cfg, rng)
    return scores_from_draws(bank, draws), draws.mode_indices


def plan_sort(scores: np.ndarray, budget: int) -> SamplingPlan:
    """Top-`budget` scores, ties broken by lowest index."""
    if budget > scores.shape[0]:
        raise ValueError("budget exceeds the number of sensors")
    chosen = np.argsort(-scores, kind="stable")[:budget]
    return SamplingPlan(indices=np.sort(chosen), solver="sort")


def _model_subset_log_density(model: GaussianModel, idx: np.ndarray, x: np.ndarray) -> float:
    if idx.size == 0:
        return 0.0
    if model.is_diagonal:
        mu = model.mean[idx]
        v = model.variances[idx]
        quad = (x[idx] - mu) ** 2 / v
        return float(-0.5 * (idx.size * LOG_TWO_PI + np.sum(np.log(v)) + np.sum(quad)))
    key = tuple(int(i) for i in np.sort(idx))
    srt = np.sort(idx)
    chol = model._subblock_cholesky(key)
    w = np.linalg.solve(chol, x[srt] - model.mean[srt])
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return float(-0.5 * (idx.size * LOG_TWO_PI + log_det + w @ w))


def sampled_objective(
    state: MonitorState, bank: ModeBank, draws: ThompsonDraws, indices: np.ndarray
) -> float:
    """The sampled reward of observing `indices` next tick: sum over the
    drawn modes of their hypothetical updated statistics."""
    idx = np.asarray(indices, dtype=np.intp)
    total = 0.0
    for i, mode in enumerate(draws.mode_indices):
        mode = int(mode)
        x = draws.draws[i]
        llr = _model_subset_log_density(bank.modes[mode], idx, x) - _model_subset_log_density(
            bank.base, idx, x
        )
        total += float(log_r_plus_one(state.logstats[mode])) + llr
    return total


class _IncrementalSubsetDensity:
    """Log-density of a fixed vector over a growing coordinate subset.

    Adding coordinate j contributes log f(x_j | x_selected); the chain
    rule keeps every greedy candidate evaluation at O(|selected|^2) via a
    growing Cholesky factor instead of refactorising from scratch.
    """

    def __init__(self, model: GaussianModel, x: np.ndarray):
        self.cov = model.dense_cov()
        self.centered = np.asarray(x) - model.mean
        self.idx: list[int] = []
        self.chol = np.zeros((0, 0))
        self.w = np.zeros(0)  # solve(chol, centered[idx])

    def gain(self, j: int) -> float:
        m = len(self.idx)
        if m == 0:
            cond_var = self.cov[j, j]
            resid = self.centered[j]
        else:
            cross = self.cov[self.idx, j]
            s = np.linalg.solve(self.chol, cross) if m else cross
            cond_var = self.cov[j, j] - s @ s
            resid = self.centered[j] - s @ self.w
        return float(-0.5 * (LOG_TWO_PI + np.log(cond_var) + resid * resid / cond_var))

    def add(self, j: int):
        m = len(self.idx)
        new = np.zeros((m + 1, m + 1))
        if m:
            cross = self.cov[self.idx, j]
            s = np.linalg.solve(self.chol, cross)
            new[:m, :m] = self.chol
            new[m, :m] = s
            diag = self.cov[j, j] - s @ s
        else:
            diag = self.cov[j, j]
        new[m, m] = np.sqrt(diag)
        resid = self.centered[j] - (new[m, :m] @ self.w if m else 0.0)
        self.chol = new
        self.w = np.append(self.w, resid / new[m, m])
        self.idx.append(j)


def plan_greedy(
    state: MonitorState, bank: ModeBank, cfg: PlannerConfig, rng=None, draws: ThompsonDraws | None = None
) -> SamplingPlan:
    """Forward selection: pick one sensor at a time, each maximising the
    sampled reward given the sensors already fixed. Exact for diagonal
    banks (the gains decompose per coordinate); an approximation under
    correlation, where it may miss the global optimum."""
    if draws is None:
        draws = draw_thompson(state, bank, cfg, as_generator(rng))
    p = bank.dim
    budget = cfg.budget
    if budget > p:
        raise ValueError("budget exceeds the number of sensors")
    if bank.is_diagonal:
        gains = scores_from_draws(bank, draws)
        selected: list[int] = []
        remaining = np.ones(p, dtype=bool)
        for _ in range(budget):
            masked = np.where(remaining, gains, -np.inf)
            j = int(np.argmax(masked))  # argmax takes the lowest tied index
            selected.append(j)
            remaining[j] = False
        return SamplingPlan(indices=np.sort(selected), solver="greedy")

    evaluators = []
    for i, mode in enumerate(draws.mode_indices):
        x = draws.draws[i]
        evaluators.append(
            (
                _IncrementalSubsetDensity(bank.modes[int(mode)], x),
                _IncrementalSubsetDensity(bank.base, x),
            )
        )
    selected = []
    remaining = np.ones(p, dtype=bool)
    for _ in range(budget):
        best_j, best_gain = -1, -np.inf
        for j in range(p):
            if not remaining[j]:
                continue
            gain = sum(alt.gain(j) - base.gain(j) for alt, base in evaluators)
            if gain > best_gain:
                best_j, best_gain = j, gain
        for alt, base in evaluators:
            alt.add(best_j)
            base.add(best_j)
        selected.append(best_j)
        remaining[best_j] = False
    return SamplingPlan(indices=np.sort(selected), solver="greedy")


def plan_exhaustive(
    state: MonitorState, bank: ModeBank, cfg: PlannerConfig, rng=None, draws: ThompsonDraws | None = None
) -> SamplingPlan:
    """Globally optimal plan for the sampled reward by enumerating every
    size-q subset; guarded, and intended as a test oracle."""
    p = bank.dim
    budget = cfg.budget
    n_sets = math.comb(p, budget)
    if n_sets > MAX_ENUMERATION:
        raise ValueError(f"C({p}, {budget}) = {n_sets} exceeds the enumeration guard")
    if draws is None:
        draws = draw_thompson(state, bank, cfg, as_generator(rng))
    best_set, best_value = None, -np.inf
    for combo in itertools.combinations(range(p), budget):
        idx = np.asarray(combo, dtype=np.intp)
        value = sampled_objective(state, bank, draws, idx)
        if value > best_value:
            best_set, best_value = idx, value
    return SamplingPlan(indices=best_set, solver="exhaustive")


def plan_random(dim: int, budget: int, rng) -> SamplingPlan:
    """Uniform subset without replacement; the non-adaptive baseline."""
    if budget > dim:
        raise ValueError("budget exceeds the number of sensors")
    rng = as_generator(rng)
    idx = rng.choice(dim, size=budget, replace=False)
    return SamplingPlan(indices=np.sort(idx), solver="random")
