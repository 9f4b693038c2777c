"""Benchmark orchestration: calibrate thresholds, run replicated policy
comparisons over a grid of change magnitudes, aggregate, and serialise.

Every random stream descends from the master seed through fixed entropy
tuples keyed by (purpose, delta index, replication, policy index), so
results are byte-identical for any worker count and any scheduling, and
the data stream of a replication is shared by all policies (common random
numbers across the comparison columns).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .baselines import RandomPolicy, TrasPolicy, TssrpPolicy
from .calibrate import CalibrationResult, CalibrationSpec, bisect_threshold
from .gaussian import ModeBank
from .policies import MRandomPolicy, MtssrpPolicy, OraclePolicy
from .scenarios import ScenarioSpec, StreamGenerator, bank_for

POLICY_KINDS = ("mtssrp", "tssrp", "tras", "random", "mrandom", "oracle")

# entropy tags for seed derivation (see module docstring)
_DATA_TAG = 1
_POLICY_TAG = 2
_CALIBRATION_TAG = 3

RECORD_COLUMNS = [
    "policy",
    "delta",
    "replication",
    "seed",
    "fired",
    "stopping_time",
    "delay",
    "censored",
    "isolated_mode",
    "isolated_label",
    "correct",
    "true_modes",
]

SUMMARY_COLUMNS = [
    "policy",
    "delta",
    "replications",
    "fired_count",
    "censor_rate",
    "mean_delay",
    "sd_delay",
    "se_delay",
    "accuracy",
    "sd_accuracy",
    "se_accuracy",
    "threshold",
    "calibrated_arl0",
    "calibration_se",
]


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    params: dict = field(default_factory=dict)
    id: str | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        object.__setattr__(self, "params", dict(self.params))
        if self.id is None:
            object.__setattr__(self, "id", self.kind)


@dataclass(frozen=True)
class BenchmarkConfig:
    scenario: ScenarioSpec
    policies: tuple[PolicySpec, ...]
    budget: int
    top_k: int = 1
    target_arl0: float = 200.0
    replications: int = 200
    delta_grid: tuple[float, ...] = (0.8,)
    calibration_replications: int = 500
    calibration_tolerance: float = 0.05
    calibration_horizon_multiplier: int = 20
    run_horizon_multiplier: int = 10
    master_seed: int = 0
    workers: int = 1
    out_dir: str = "results"
    save_trajectories: int = 0

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.delta_grid:
            raise ValueError("delta_grid must be non-empty")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        object.__setattr__(self, "policies", tuple(self.policies))
        object.__setattr__(self, "delta_grid", tuple(float(d) for d in self.delta_grid))
        ids = [p.id for p in self.policies]
        if len(set(ids)) != len(ids):
            raise ValueError("policy ids must be unique")

    @property
    def run_horizon(self) -> int:
        return int(math.ceil(self.run_horizon_multiplier * self.target_arl0))

    def calibration_spec(self) -> CalibrationSpec:
        return CalibrationSpec(
            target_arl=self.target_arl0,
            replications=self.calibration_replications,
            max_horizon=int(math.ceil(self.calibration_horizon_multiplier * self.target_arl0)),
            tolerance=self.calibration_tolerance,
        )


@dataclass(frozen=True)
class RunRecord:
    policy: str
    delta: float
    replication: int
    seed: str
    fired: bool
    stopping_time: int
    delay: int | None
    censored: bool
    isolated_mode: int | None
    isolated_label: str
    correct: bool | None
    true_modes: tuple[int, ...]
    trajectory: list | None = None


@dataclass(frozen=True)
class SummaryRow:
    policy: str
    delta: float
    replications: int
    fired_count: int
    censor_rate: float
    mean_delay: float
    sd_delay: float
    se_delay: float
    accuracy: float | None
    sd_accuracy: float | None
    se_accuracy: float | None
    threshold: float
    calibrated_arl0: float
    calibration_se: float


# ---------------------------------------------------------------------------
# config serialisation


_SCENARIO_FIELDS = (
    "kind",
    "delta",
    "p",
    "K",
    "rows",
    "cols",
    "knots",
    "change_time",
    "n_true_modes",
    "true_modes",
    "mixing",
    "bank_file",
)

_CONFIG_FIELDS = {
    "scenario",
    "policies",
    "budget",
    "top_k",
    "target_arl0",
    "replications",
    "delta_grid",
    "calibration_replications",
    "calibration_tolerance",
    "calibration_horizon_multiplier",
    "run_horizon_multiplier",
    "master_seed",
    "workers",
    "out_dir",
    "save_trajectories",
}


def config_from_dict(raw: dict) -> BenchmarkConfig:
    unknown = set(raw) - _CONFIG_FIELDS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    raw = dict(raw)
    scen_raw = dict(raw.pop("scenario", {}))
    unknown = set(scen_raw) - set(_SCENARIO_FIELDS)
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    if "true_modes" in scen_raw and scen_raw["true_modes"] is not None:
        scen_raw["true_modes"] = tuple(scen_raw["true_modes"])
    scenario = ScenarioSpec(**scen_raw)
    policies = tuple(
        PolicySpec(kind=p["kind"], params=p.get("params", {}), id=p.get("id"))
        for p in raw.pop("policies")
    )
    return BenchmarkConfig(scenario=scenario, policies=policies, **raw)


def load_config(path) -> BenchmarkConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def config_to_dict(cfg: BenchmarkConfig) -> dict:
    out = asdict(cfg)
    out["scenario"] = {k: getattr(cfg.scenario, k) for k in _SCENARIO_FIELDS}
    if out["scenario"]["true_modes"] is not None:
        out["scenario"]["true_modes"] = list(out["scenario"]["true_modes"])
    out["policies"] = [
        {"kind": p.kind, "params": p.params, "id": p.id} for p in cfg.policies
    ]
    out["delta_grid"] = list(cfg.delta_grid)
    return out


def config_hash(cfg: BenchmarkConfig) -> str:
    """Hash of the semantic fields only: anything that changes the records.
    Worker count, output paths, and trajectory dumping do not count."""
    payload = config_to_dict(cfg)
    for key in ("workers", "out_dir", "save_trajectories"):
        payload.pop(key, None)
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# policy construction

_BANK_CACHE: dict = {}


def _bank_cached(scenario: ScenarioSpec) -> ModeBank:
    key = (
        scenario.kind,
        scenario.delta,
        scenario.p,
        scenario.K,
        scenario.rows,
        scenario.cols,
        scenario.knots,
        scenario.bank_file,
    )
    bank = _BANK_CACHE.get(key)
    if bank is None:
        bank = bank_for(scenario)
        _BANK_CACHE[key] = bank
    return bank


def build_policy(spec: PolicySpec, bank: ModeBank, budget: int, top_k: int, delta: float, rng):
    params = spec.params
    if spec.kind == "mtssrp":
        return MtssrpPolicy(
            bank, budget=budget, top_k=top_k, solver=params.get("solver", "sort"), rng=rng
        )
    if spec.kind == "oracle":
        return OraclePolicy(bank, top_k=top_k, rng=rng)
    if spec.kind == "mrandom":
        return MRandomPolicy(bank, budget=budget, top_k=top_k, rng=rng)
    if spec.kind == "tssrp":
        return TssrpPolicy(
            bank,
            budget=budget,
            shift=params.get("shift", delta),
            top_r=params.get("top_r", budget),
            rng=rng,
        )
    if spec.kind == "random":
        return RandomPolicy(
            bank,
            budget=budget,
            shift=params.get("shift", delta),
            top_r=params.get("top_r", budget),
            rng=rng,
        )
    allowance = params.get("allowance", 0.5 * delta)
    return TrasPolicy(
        bank,
        budget=budget,
        allowance=allowance,
        compensation=params.get("compensation", 0.5 * allowance),
        top_r=params.get("top_r", budget),
        explore_fraction=params.get("explore_fraction", 0.0),
        rng=rng,
    )


def _seed_rng(*entropy) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(tuple(int(e) for e in entropy)))


# ---------------------------------------------------------------------------
# single replication


def run_single(policy, generator: StreamGenerator, threshold: float, horizon: int, collect: bool = False):
    """Drive one replication: plan, observe, update, check; stop at the
    first tick whose rule statistic reaches the threshold (inclusive) or
    at the horizon (censored).

    Returns (fired, stopping_time, isolated_mode, trajectory_rows).
    """
    rows = [] if collect else None
    for t in range(1, horizon + 1):
        idx = policy.plan()
        vals = generator.observe(t, idx)
        policy.update(t, idx, vals)
        stat = policy.statistic()
        if collect:
            ranking = policy.mode_ranking() if hasattr(policy, "mode_ranking") else None
            rows.append((t, idx.copy(), stat, _policy_stats(policy), ranking))
        if stat >= threshold:
            return True, t, policy.isolate(), rows
    return False, horizon, None, rows


def _policy_stats(policy) -> np.ndarray:
    if hasattr(policy, "state"):
        return np.array(policy.state.logstats)
    return np.array(policy._stats())


def run_replication(
    cfg: BenchmarkConfig,
    delta_index: int,
    policy_index: int,
    rep: int,
    threshold: float,
    collect: bool = False,
) -> RunRecord:
    delta = cfg.delta_grid[delta_index]
    scenario = cfg.scenario.with_delta(delta)
    pspec = cfg.policies[policy_index]
    bank = _bank_cached(scenario)
    data_rng = _seed_rng(cfg.master_seed, _DATA_TAG, delta_index, rep)
    policy_rng = _seed_rng(cfg.master_seed, _POLICY_TAG, delta_index, rep, policy_index)
    generator = StreamGenerator(scenario, bank, data_rng, record_detail=collect)
    policy = build_policy(pspec, bank, cfg.budget, cfg.top_k, delta, policy_rng)
    fired, t_stop, isolated, rows = run_single(
        policy, generator, threshold, cfg.run_horizon, collect=collect
    )
    nu = scenario.change_time
    delay = None if nu is None else max(0, t_stop - nu)
    correct = None
    label = ""
    if fired:
        correct = isolated in generator.true_modes
        label = bank.labels[isolated]
    return RunRecord(
        policy=pspec.id,
        delta=delta,
        replication=rep,
        seed=f"{cfg.master_seed}:{delta_index}:{rep}",
        fired=fired,
        stopping_time=t_stop,
        delay=delay,
        censored=not fired,
        isolated_mode=isolated,
        isolated_label=label,
        correct=correct,
        true_modes=generator.true_modes,
        trajectory=rows,
    )


# ---------------------------------------------------------------------------
# calibration with a file-backed cache


def calibration_key(cfg: BenchmarkConfig, delta_index: int, policy_index: int) -> str:
    scenario = cfg.scenario.with_delta(cfg.delta_grid[delta_index]).as_null()
    pspec = cfg.policies[policy_index]
    payload = {
        "scenario": {k: getattr(scenario, k) for k in _SCENARIO_FIELDS},
        "policy": {"kind": pspec.kind, "params": pspec.params},
        "budget": cfg.budget,
        "top_k": cfg.top_k,
        "target_arl0": cfg.target_arl0,
        "calibration_replications": cfg.calibration_replications,
        "calibration_tolerance": cfg.calibration_tolerance,
        "calibration_horizon_multiplier": cfg.calibration_horizon_multiplier,
        "master_seed": cfg.master_seed,
    }
    if payload["scenario"]["true_modes"] is not None:
        payload["scenario"]["true_modes"] = list(payload["scenario"]["true_modes"])
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


def calibrate_cell(cfg: BenchmarkConfig, delta_index: int, policy_index: int) -> CalibrationResult:
    """Calibrate one (policy, delta) cell on null streams."""
    delta = cfg.delta_grid[delta_index]
    scenario = cfg.scenario.with_delta(delta).as_null()
    pspec = cfg.policies[policy_index]
    bank = _bank_cached(scenario)

    def make_policy(rng):
        return build_policy(pspec, bank, cfg.budget, cfg.top_k, delta, rng)

    def make_generator(rng):
        return StreamGenerator(scenario, bank, rng, record_detail=False)

    seed = np.random.SeedSequence(
        (int(cfg.master_seed), _CALIBRATION_TAG, int(delta_index), int(policy_index))
    )
    return bisect_threshold(
        cfg.calibration_spec(), make_policy, make_generator, seed, num_modes=bank.K
    )


def _calibration_cache_path(out_dir: str) -> str:
    return os.path.join(out_dir, "calibration.json")


def load_calibration_cache(out_dir: str) -> dict:
    path = _calibration_cache_path(out_dir)
    if not os.path.exists(path):
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def save_calibration_cache(out_dir: str, cache: dict):
    os.makedirs(out_dir, exist_ok=True)
    with open(_calibration_cache_path(out_dir), "w", encoding="utf-8") as fh:
        json.dump(cache, fh, sort_keys=True, indent=2)


def _calibrate_cell_task(args):
    cfg_dict, delta_index, policy_index = args
    cfg = config_from_dict(cfg_dict)
    result = calibrate_cell(cfg, delta_index, policy_index)
    return delta_index, policy_index, asdict(result)


def _run_chunk_task(args):
    cfg_dict, delta_index, policy_index, reps, threshold, collect_upto = args
    cfg = config_from_dict(cfg_dict)
    records = []
    for rep in reps:
        collect = rep < collect_upto
        records.append(
            run_replication(cfg, delta_index, policy_index, rep, threshold, collect=collect)
        )
    return delta_index, policy_index, records


# ---------------------------------------------------------------------------
# benchmark


@dataclass
class BenchmarkResult:
    config: BenchmarkConfig
    records: list
    summary: list
    calibration: dict  # "policy@delta" -> CalibrationResult


def ensure_calibrations(cfg: BenchmarkConfig, progress=None) -> dict:
    """Calibrate every (policy, delta) cell, consulting the on-disk cache
    keyed by the cell's semantic content."""
    cache = load_calibration_cache(cfg.out_dir)
    pending = []
    results = {}
    for di in range(len(cfg.delta_grid)):
        for pi in range(len(cfg.policies)):
            key = calibration_key(cfg, di, pi)
            if key in cache:
                results[(di, pi)] = CalibrationResult(**cache[key])
            else:
                pending.append((di, pi))
    if pending:
        cfg_dict = config_to_dict(cfg)
        tasks = [(cfg_dict, di, pi) for di, pi in pending]
        if cfg.workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                outs = list(pool.map(_calibrate_cell_task, tasks))
        else:
            outs = [_calibrate_cell_task(t) for t in tasks]
        for di, pi, result_dict in outs:
            result = CalibrationResult(**result_dict)
            results[(di, pi)] = result
            cache[calibration_key(cfg, di, pi)] = result_dict
            if progress:
                progress(
                    f"calibrated {cfg.policies[pi].id} at delta={cfg.delta_grid[di]}: "
                    f"threshold={result.threshold:.4f} arl0={result.achieved_arl:.1f}"
                )
        save_calibration_cache(cfg.out_dir, cache)
    return results


def run_benchmark(cfg: BenchmarkConfig, progress=None) -> BenchmarkResult:
    calibrations = ensure_calibrations(cfg, progress=progress)

    cfg_dict = config_to_dict(cfg)
    chunk = max(1, cfg.replications // max(1, cfg.workers * 4))
    tasks = []
    for di in range(len(cfg.delta_grid)):
        for pi in range(len(cfg.policies)):
            threshold = calibrations[(di, pi)].threshold
            for start in range(0, cfg.replications, chunk):
                reps = list(range(start, min(start + chunk, cfg.replications)))
                tasks.append((cfg_dict, di, pi, reps, threshold, cfg.save_trajectories))

    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outs = list(pool.map(_run_chunk_task, tasks))
    else:
        outs = [_run_chunk_task(t) for t in tasks]

    records = []
    for di, pi, recs in outs:
        records.extend(recs)
    order = {p.id: i for i, p in enumerate(cfg.policies)}
    records.sort(key=lambda r: (order[r.policy], r.delta, r.replication))

    summary = summarize(cfg, records, calibrations)
    calibration = {
        f"{cfg.policies[pi].id}@{cfg.delta_grid[di]}": res
        for (di, pi), res in calibrations.items()
    }
    return BenchmarkResult(config=cfg, records=records, summary=summary, calibration=calibration)


def summarize(cfg: BenchmarkConfig, records: list, calibrations: dict) -> list:
    """Aggregate records into one row per (policy, delta); exactly
    reproducible from the records."""
    rows = []
    for di, delta in enumerate(cfg.delta_grid):
        for pi, pspec in enumerate(cfg.policies):
            cell = [r for r in records if r.policy == pspec.id and r.delta == delta]
            if not cell:
                continue
            delays = np.array(
                [r.delay if r.delay is not None else r.stopping_time for r in cell], dtype=float
            )
            fired = [r for r in cell if r.fired]
            n = len(cell)
            mean_delay = float(delays.mean())
            sd_delay = float(delays.std(ddof=1)) if n > 1 else 0.0
            flags = np.array([1.0 if r.correct else 0.0 for r in fired])
            if fired:
                accuracy = float(flags.mean())
                sd_acc = float(flags.std(ddof=1)) if len(fired) > 1 else 0.0
                se_acc = sd_acc / math.sqrt(len(fired))
            else:
                accuracy = sd_acc = se_acc = None
            calib = calibrations[(di, pi)]
            rows.append(
                SummaryRow(
                    policy=pspec.id,
                    delta=delta,
                    replications=n,
                    fired_count=len(fired),
                    censor_rate=float(np.mean([r.censored for r in cell])),
                    mean_delay=mean_delay,
                    sd_delay=sd_delay,
                    se_delay=sd_delay / math.sqrt(n),
                    accuracy=accuracy,
                    sd_accuracy=sd_acc,
                    se_accuracy=se_acc,
                    threshold=calib.threshold,
                    calibrated_arl0=calib.achieved_arl,
                    calibration_se=calib.standard_error,
                )
            )
    return rows


# ---------------------------------------------------------------------------
# export and replay


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def export_results(result: BenchmarkResult, out_dir: str | None = None) -> dict:
    """Write records.csv, summary.csv, summary.json (and any collected
    trajectories); byte-stable for identical inputs. Returns the paths."""
    cfg = result.config
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    records_path = os.path.join(out_dir, "records.csv")
    with open(records_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS)
        for r in result.records:
            writer.writerow(
                [
                    r.policy,
                    _fmt(r.delta),
                    r.replication,
                    r.seed,
                    _fmt(r.fired),
                    r.stopping_time,
                    _fmt(r.delay),
                    _fmt(r.censored),
                    _fmt(r.isolated_mode),
                    r.isolated_label,
                    _fmt(r.correct),
                    "|".join(str(m) for m in r.true_modes),
                ]
            )
    paths["records"] = records_path

    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for s in result.summary:
            writer.writerow([_fmt(getattr(s, c)) for c in SUMMARY_COLUMNS])
    paths["summary"] = summary_path

    json_path = os.path.join(out_dir, "summary.json")
    payload = {
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "calibration": {k: asdict(v) for k, v in result.calibration.items()},
        "summary": [asdict(s) for s in result.summary],
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    paths["summary_json"] = json_path

    for r in result.records:
        if r.trajectory:
            traj_path = os.path.join(
                out_dir, f"trajectory_{r.policy}_{_fmt(r.delta)}_{r.replication}.csv"
            )
            write_trajectory(traj_path, r.trajectory)
            paths.setdefault("trajectories", []).append(traj_path)
    return paths


def write_trajectory(path: str, rows: list):
    """Per-tick rows: statistic, plan, full statistic vector, and (for
    mode-level policies) the ranked mode table."""
    n_stats = rows[0][3].shape[0]
    has_rank = rows[0][4] is not None
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["t", "statistic", "plan"] + [f"stat_{i}" for i in range(n_stats)]
        if has_rank:
            header += [f"rank_{i}" for i in range(min(10, n_stats))]
        writer.writerow(header)
        for t, idx, stat, stats, ranking in rows:
            row = [t, _fmt(float(stat)), "|".join(str(i) for i in idx)]
            row += [_fmt(float(v)) for v in stats]
            if has_rank:
                row += [int(m) for m in ranking[:10]]
            writer.writerow(row)


def replay(out_dir: str, policy_id: str, delta: float, rep: int) -> RunRecord:
    """Re-execute one archived replication bit-exactly from its seeds.

    Loads the config and calibrated threshold from summary.json, verifies
    the stored config hash, and reruns with trajectory collection on.
    """
    with open(os.path.join(out_dir, "summary.json"), "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    cfg = config_from_dict(payload["config"])
    if config_hash(cfg) != payload["config_hash"]:
        raise ValueError("config hash mismatch: archive inconsistent with its config")
    delta_index = cfg.delta_grid.index(float(delta))
    policy_index = next(i for i, p in enumerate(cfg.policies) if p.id == policy_id)
    calib = payload["calibration"][f"{policy_id}@{cfg.delta_grid[delta_index]}"]
    return run_replication(
        cfg, delta_index, policy_index, rep, calib["threshold"], collect=True
    )
