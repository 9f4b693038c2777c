"""Log-space mode-level monitoring statistics, the stopping rule, and
failure-mode isolation at alarm time.

One statistic R_k is maintained per candidate failure mode and updated
multiplicatively, R_k <- (R_k + 1) * LR_k(observed tick). Everything runs
on r_k = log R_k; the statistics grow without bound under a persistent
change, so linear-space values overflow quickly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import ModeBank, Observation, llr_all_modes

# r = log R with R_0 = 0. IEEE -inf makes log(exp(r) + 1) land on 0.0
# exactly (logaddexp(-inf, 0) == 0), so the first update is exact.
LOG_ZERO = float("-inf")


def log_r_plus_one(r):
    """log(exp(r) + 1), stable for any finite r and exact at LOG_ZERO."""
    return np.logaddexp(r, 0.0)


@dataclass(frozen=True)
class MonitorState:
    """Tick counter plus the per-mode log statistics; never mutated in
    place, updates return a fresh state."""

    t: int
    logstats: np.ndarray
    last_plan: object = None

    def __post_init__(self):
        stats = np.asarray(self.logstats, dtype=np.float64)
        stats.flags.writeable = False
        object.__setattr__(self, "logstats", stats)


@dataclass(frozen=True)
class DetectionConfig:
    """Stopping rule: `max` alarms on the largest statistic, `top_sum` on
    the sum of the `top_k` largest. With top_k=1 the two coincide."""

    threshold: float
    rule: str = "top_sum"
    top_k: int = 1

    def __post_init__(self):
        if self.rule not in ("max", "top_sum"):
            raise ValueError(f"unknown rule {self.rule!r}")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not np.isfinite(self.threshold):
            raise ValueError("threshold must be finite")


@dataclass(frozen=True)
class AlarmReport:
    fired: bool
    time: int
    statistic_value: float
    isolated_mode: int | None = None

    def __post_init__(self):
        if self.fired != (self.isolated_mode is not None):
            raise ValueError("isolated_mode must be present exactly when fired")


def initial_state(num_modes: int) -> MonitorState:
    """State at t=0: every statistic starts at R=0, i.e. log zero."""
    return MonitorState(t=0, logstats=np.full(num_modes, LOG_ZERO))


def update(state: MonitorState, bank: ModeBank, obs: Observation, plan=None) -> MonitorState:
    """Advance all K statistics by one observed tick.

    Unobserved-mode increments are exactly zero (their marginal ratio over
    an index set that misses every differing coordinate is 1), so those
    statistics still drift upward through the +1 term; that drift is what
    eventually forces the planner to revisit them.
    """
    if obs.time != state.t + 1:
        raise ValueError(f"observation time {obs.time} != state.t + 1 = {state.t + 1}")
    if obs.size and obs.indices[-1] >= bank.dim:
        raise ValueError("observation indices exceed bank dimension")
    if state.logstats.shape[0] != bank.K:
        raise ValueError("state size does not match bank mode count")
    increments = llr_all_modes(bank, obs.indices, obs.values)
    logstats = log_r_plus_one(state.logstats) + increments
    return MonitorState(t=obs.time, logstats=logstats, last_plan=plan)


def rule_statistic(state: MonitorState, cfg: DetectionConfig) -> float:
    """The scalar the alarm rule thresholds at the current tick."""
    if state.t < 1:
        raise ValueError("rule statistic is undefined before the first update")
    stats = state.logstats
    if cfg.rule == "max":
        return float(stats.max())
    k = cfg.top_k
    if k > stats.shape[0]:
        raise ValueError("top_k exceeds the number of modes")
    if k == stats.shape[0]:
        return float(stats.sum())
    return float(np.partition(stats, stats.shape[0] - k)[-k:].sum())


def isolate(logstats: np.ndarray) -> int:
    """Most likely failure mode: argmax statistic, ties to lowest index."""
    return int(np.argmax(logstats))


def check_alarm(state: MonitorState, cfg: DetectionConfig) -> AlarmReport:
    """Inclusive threshold comparison; isolation only when fired."""
    value = rule_statistic(state, cfg)
    if value >= cfg.threshold:
        return AlarmReport(
            fired=True,
            time=state.t,
            statistic_value=value,
            isolated_mode=isolate(state.logstats),
        )
    return AlarmReport(fired=False, time=state.t, statistic_value=value)
