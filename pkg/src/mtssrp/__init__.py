"""Adaptive partially-observed change detection and failure-mode isolation.

Monitors a high-dimensional data stream through a sensing budget of q out
of p coordinates per tick, maintains one multiplicative likelihood-ratio
statistic per candidate failure mode, picks the next index set by
Thompson-sampled reward maximisation, and raises a calibrated alarm that
also names the most likely mode. Includes the comparator policies and a
benchmark harness for replicated simulation studies.
"""

from .baselines import RandomPolicy, TrasPolicy, TssrpPolicy, tras_step, tssrp_step
from .calibrate import (
    ArlEstimate,
    CalibrationError,
    CalibrationResult,
    CalibrationSpec,
    NullCrossingEnsemble,
    bisect_threshold,
    estimate_arl0,
    initial_bracket,
)
from .gaussian import (
    GaussianModel,
    ModeBank,
    Observation,
    log_likelihood_ratio,
    marginal_log_density,
    sample_mode,
)
from .harness import (
    BenchmarkConfig,
    BenchmarkResult,
    PolicySpec,
    RunRecord,
    config_hash,
    export_results,
    load_config,
    replay,
    run_benchmark,
)
from .monitor import (
    AlarmReport,
    DetectionConfig,
    MonitorState,
    check_alarm,
    initial_state,
    rule_statistic,
    update,
)
from .planner import (
    PlannerConfig,
    SamplingPlan,
    ThompsonDraws,
    plan_exhaustive,
    plan_greedy,
    plan_random,
    plan_sort,
    thompson_scores,
)
from .policies import MRandomPolicy, MtssrpPolicy, OraclePolicy
from .scenarios import (
    ScenarioSpec,
    StreamGenerator,
    bank_from_samples,
    build_nonoverlap,
    build_overlap,
    load_bank,
    save_bank,
)

__version__ = "0.1.0"
