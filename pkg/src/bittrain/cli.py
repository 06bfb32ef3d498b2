"""Command-line surface.

Subcommands: ``train`` (one deterministic run), ``reprocheck`` (the S1-S5
reproducibility matrix), ``bitdiff`` (first-divergence localization),
``plan`` (allocation planning queries), ``simulate`` (trace-driven cluster
simulation).

Exit codes: 0 success / bitwise-identical, 1 semantic finding (divergence
or a violated guarantee), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .checkpoint import checkpoint_save
from .configio import (
    load_matrix,
    load_pool,
    load_profile,
    load_train_config,
    read_trace,
    write_metrics,
)
from .engine import DeterminismMode
from .errors import BittrainError
from .planner import enumerate_configs
from .runlog import RunLog, bitdiff
from .scenarios import guaranteed_levels, run_matrix, run_training
from .simulator import simulate

USAGE_ERROR = 2
FINDING = 1


def _cmd_train(args) -> int:
    cfg, spec, steps, dump_every = load_train_config(args.config)
    log, ts = run_training(cfg, spec, steps, dump_every=dump_every)
    log.dump(args.out)
    if args.ckpt:
        with open(args.ckpt, "wb") as fh:
            fh.write(checkpoint_save(ts))
    print(f"trained {steps} mini-batches; final param hash {log.records[-1].param_hash}")
    return 0


def _cmd_reprocheck(args) -> int:
    cfg, scenarios, steps = load_matrix(args.matrix)
    cfg = dataclasses.replace(cfg, determinism=DeterminismMode.from_label(args.mode))
    report = run_matrix(cfg, scenarios, steps)
    guaranteed = guaranteed_levels(args.mode)
    print(f"mode {args.mode}: {len(report.results)} scenarios")
    for r in report.results:
        tag = "guaranteed" if r.level in guaranteed else "best-effort"
        if r.bitwise_equal:
            print(f"  {r.level}  BITWISE-EQUAL  ({tag})")
        elif r.divergence is not None:
            print(f"  {r.level}  DIVERGED  {r.divergence.describe()}  ({tag})")
        else:
            print(f"  {r.level}  DIVERGED  final parameters differ  ({tag})")
    failed = report.failed_guarantees()
    if failed:
        print(f"guarantee violated: {', '.join(failed)}")
        return FINDING
    return 0


def _cmd_bitdiff(args) -> int:
    log_a = RunLog.load(args.log_a)
    log_b = RunLog.load(args.log_b)
    div = bitdiff(log_a, log_b)
    if div is None:
        print("IDENTICAL")
        return 0
    print(div.describe())
    return FINDING


def _cmd_plan(args) -> int:
    pool, _workloads, _fanins = load_pool(args.pool)
    profile = load_profile(args.profile)
    configs = enumerate_configs(pool, profile, args.minp, args.maxp)
    if not configs:
        print("no feasible configuration")
        return FINDING
    names = [t.name for t in pool.types]
    print(f"{len(configs)} feasible configurations (best first)")
    print(f"{'nums':<28}{'executors':<12}{'threads':<12}{'CU':>4}{'waste%':>9}{'perf':>10}")
    for cfg in configs[: args.top]:
        nums = ",".join(f"{n}x{t}" for n, t in zip(cfg.nums, names) if n)
        execs = ",".join(str(e) for e in cfg.executors)
        thr = ",".join(str(t) for t in cfg.threads)
        print(
            f"{nums:<28}{execs:<12}{thr:<12}{cfg.cu_capacity:>4}"
            f"{cfg.waste_norm:>9.3f}{cfg.perf:>10.4f}"
        )
    return 0


def _cmd_simulate(args) -> int:
    trace = read_trace(args.trace)
    pool, workloads, _fanins = load_pool(args.pool)
    mode = {"yarn": "yarn", "homo": "homo", "heter": "heter"}[args.mode]
    metrics = simulate(trace, pool, workloads, mode)
    paths = write_metrics(metrics, args.out)
    print(
        f"mode {mode}: mean JCT {metrics.mean_jct:.2f}s, makespan {metrics.makespan:.2f}s, "
        f"{len(metrics.completed)}/{len(metrics.jobs)} jobs completed"
    )
    for p in paths:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bittrain",
        description="Bitwise-reproducible elastic training, planning, and cluster simulation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one deterministic training job")
    p.add_argument("--config", required=True, help="training config (YAML)")
    p.add_argument("--out", required=True, help="run log output path (JSON lines)")
    p.add_argument("--ckpt", help="final checkpoint output path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("reprocheck", help="run the S1-S5 reproducibility matrix")
    p.add_argument("--mode", required=True, choices=["d0", "d1", "d1d2"])
    p.add_argument("--matrix", required=True, help="matrix spec (YAML)")
    p.set_defaults(func=_cmd_reprocheck)

    p = sub.add_parser("bitdiff", help="locate the first bitwise divergence of two run logs")
    p.add_argument("log_a")
    p.add_argument("log_b")
    p.set_defaults(func=_cmd_bitdiff)

    p = sub.add_parser("plan", help="enumerate allocation plans for a pool and workload")
    p.add_argument("--pool", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--minp", type=int, default=0)
    p.add_argument("--maxp", type=int, required=True)
    p.add_argument("--top", type=int, default=10, help="rows to print")
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("simulate", help="trace-driven cluster simulation")
    p.add_argument("--trace", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--mode", required=True, choices=["yarn", "homo", "heter"])
    p.add_argument("--out", required=True, help="output directory for metrics CSVs")
    p.set_defaults(func=_cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BittrainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
