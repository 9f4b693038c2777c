"""Command-line front end: calibrate thresholds, run benchmarks, sweep a
grid of change magnitudes, and replay archived replications."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import harness


def _add_common(parser):
    parser.add_argument("--config", required=True, help="benchmark config (JSON)")
    parser.add_argument("--seed", type=int, default=None, help="override master_seed")
    parser.add_argument("--reps", type=int, default=None, help="override replications")
    parser.add_argument("--workers", type=int, default=None, help="override worker count")
    parser.add_argument("--out", default=None, help="override output directory")


def _load(args) -> harness.BenchmarkConfig:
    cfg = harness.load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.reps is not None:
        overrides["replications"] = args.reps
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.out is not None:
        overrides["out_dir"] = args.out
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


def _echo(msg):
    print(msg, flush=True)


def cmd_calibrate(args):
    cfg = _load(args)
    results = harness.ensure_calibrations(cfg, progress=_echo)
    for (di, pi), res in sorted(results.items()):
        _echo(
            f"{cfg.policies[pi].id} @ delta={cfg.delta_grid[di]}: threshold={res.threshold:.4f} "
            f"arl0={res.achieved_arl:.2f} (se {res.standard_error:.2f}, "
            f"censored {res.censor_rate:.1%}, converged={res.converged})"
        )
    _echo(f"calibration cache: {harness._calibration_cache_path(cfg.out_dir)}")
    return 0


def cmd_run(args):
    cfg = _load(args)
    result = harness.run_benchmark(cfg, progress=_echo)
    paths = harness.export_results(result)
    for s in result.summary:
        acc = "-" if s.accuracy is None else f"{s.accuracy:.3f}"
        _echo(
            f"{s.policy:8s} delta={s.delta}: mean delay {s.mean_delay:.2f} "
            f"(sd {s.sd_delay:.2f}), accuracy {acc}, censored {s.censor_rate:.1%}"
        )
    _echo(f"wrote {paths['records']}, {paths['summary']}, {paths['summary_json']}")
    return 0


def cmd_sweep(args):
    cfg = _load(args)
    deltas = tuple(float(d) for d in args.deltas.split(","))
    cfg = replace(cfg, delta_grid=deltas)
    result = harness.run_benchmark(cfg, progress=_echo)
    paths = harness.export_results(result)
    _echo(f"swept deltas {deltas}; wrote {paths['summary']}")
    return 0


def cmd_replay(args):
    record = harness.replay(args.records, args.policy, args.delta, args.rep)
    out = args.out or f"trajectory_{args.policy}_{args.delta}_{args.rep}.csv"
    harness.write_trajectory(out, record.trajectory)
    _echo(
        f"replayed {args.policy} delta={args.delta} rep={args.rep}: "
        f"fired={record.fired} T={record.stopping_time} mode={record.isolated_mode}"
    )
    _echo(f"wrote {out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mtssrp",
        description="Adaptive partially-observed change detection benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="calibrate control limits for every (policy, delta) cell")
    _add_common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("run", help="run the configured benchmark and export results")
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run the benchmark across an explicit delta grid")
    _add_common(p)
    p.add_argument("--deltas", required=True, help="comma-separated change magnitudes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("replay", help="re-execute one archived replication and dump its trajectory")
    p.add_argument("--records", required=True, help="benchmark output directory")
    p.add_argument("--policy", required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--rep", type=int, required=True)
    p.add_argument("--out", default=None, help="trajectory CSV path")
    p.set_defaults(func=cmd_replay)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
