"""Stateful per-run policy drivers.

A policy owns the statistics for one replication and exposes the same
four-beat loop to the harness: plan() the next index set, update() with
the returned values, statistic() for the alarm rule, isolate() at alarm
time. Fresh instances are created per replication; the underlying
update/planning functions are pure, so replications parallelise freely.
"""

from __future__ import annotations

import numpy as np

from . import monitor, planner
from .gaussian import ModeBank, Observation, as_generator


class MtssrpPolicy:
    """Mode-level monitoring with Thompson-sampled sensor selection."""

    name = "mtssrp"

    def __init__(self, bank: ModeBank, budget: int, top_k: int = 1, solver: str = "sort", rng=None):
        self.bank = bank
        self.planner_cfg = planner.PlannerConfig(budget=budget, top_k=top_k, solver=solver)
        self.rule = monitor.DetectionConfig(threshold=0.0, rule="top_sum", top_k=top_k)
        self.rng = as_generator(rng)
        self.state = monitor.initial_state(bank.K)

    def plan(self) -> np.ndarray:
        cfg = self.planner_cfg
        if cfg.solver == "sort":
            scores, _ = planner.thompson_scores(self.state, self.bank, cfg, self.rng)
            plan = planner.plan_sort(scores, cfg.budget)
        elif cfg.solver == "greedy":
            plan = planner.plan_greedy(self.state, self.bank, cfg, rng=self.rng)
        else:
            plan = planner.plan_exhaustive(self.state, self.bank, cfg, rng=self.rng)
        self._last_plan = plan
        return plan.indices

    def update(self, t: int, indices: np.ndarray, values: np.ndarray):
        obs = Observation(time=t, indices=indices, values=values)
        plan = getattr(self, "_last_plan", None)
        self.state = monitor.update(self.state, self.bank, obs, plan=plan)

    def statistic(self) -> float:
        return monitor.rule_statistic(self.state, self.rule)

    def isolate(self) -> int:
        return monitor.isolate(self.state.logstats)

    def mode_ranking(self) -> np.ndarray:
        """All modes ordered by current statistic, best first."""
        return planner.top_modes(self.state.logstats, self.bank.K)


class OraclePolicy(MtssrpPolicy):
    """Mode-level monitoring with every sensor observed every tick; the
    upper-bound comparator (full data plus mode knowledge)."""

    name = "oracle"

    def __init__(self, bank: ModeBank, top_k: int = 1, rng=None):
        super().__init__(bank, budget=bank.dim, top_k=top_k, rng=rng)
        self._all = np.arange(bank.dim, dtype=np.intp)

    def plan(self) -> np.ndarray:
        self._last_plan = planner.SamplingPlan(indices=self._all, solver="fixed")
        return self._all


class MRandomPolicy(MtssrpPolicy):
    """Mode-level monitoring, but the index set is drawn uniformly;
    separates the value of the statistics from the value of planning."""

    name = "mrandom"

    def __init__(self, bank: ModeBank, budget: int, top_k: int = 1, rng=None):
        super().__init__(bank, budget=budget, top_k=top_k, rng=rng)

    def plan(self) -> np.ndarray:
        plan = planner.plan_random(self.bank.dim, self.planner_cfg.budget, self.rng)
        self._last_plan = plan
        return plan.indices
