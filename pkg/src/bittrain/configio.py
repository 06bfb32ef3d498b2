"""File formats: YAML configuration trees and CSV trace/metrics files.

Pool file (device types are ordered; order is part of the contract):

    device_types:
      - name: gpu_a
        count: 2
        memory_mu: 2.0
        fanin: 2                     # reduction-tree fanin for training runs
        interference: {1: 1.0, 2: 0.8}
    workloads:
      cnn:
        mu: 1.0
        capability: {gpu_a: 2.45, gpu_b: 1.0}

Standalone workload profile (for planning queries):

    mu: 1.0
    capability: {gpu_a: 2.45, gpu_b: 1.0}

Trace CSV header: ``job_id,arrival_s,minP,maxP,total_minibatches,workload_key,determinism``.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import yaml

from .engine import DeterminismMode, ExecutorSpec, TrainRunConfig
from .errors import ConfigError
from .planner import DevicePool, DeviceType, WorkloadProfile
from .scenarios import ReproScenario, RestartEvent, RunSpec
from .simulator import SimMetrics, TraceJob

TRACE_HEADER = [
    "job_id",
    "arrival_s",
    "minP",
    "maxP",
    "total_minibatches",
    "workload_key",
    "determinism",
]


def _load_yaml(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a key-value tree")
    return doc


def load_pool(path) -> tuple[DevicePool, dict[str, WorkloadProfile], dict[str, int]]:
    """Parse a pool file: (pool, workload profiles, device fanins)."""
    doc = _load_yaml(path)
    entries = doc.get("device_types")
    if not entries:
        raise ConfigError(f"{path}: no device_types")
    types = []
    fanins = {}
    for e in entries:
        try:
            types.append(
                DeviceType(
                    name=str(e["name"]),
                    count=int(e["count"]),
                    memory_mu=float(e.get("memory_mu", 1.0)),
                    interference={
                        int(m): float(v) for m, v in e.get("interference", {1: 1.0}).items()
                    },
                )
            )
        except KeyError as exc:
            raise ConfigError(f"{path}: device type missing field {exc}") from exc
        fanins[str(e["name"])] = int(e.get("fanin", 2))
    pool = DevicePool(tuple(types))
    workloads = {}
    for key, w in (doc.get("workloads") or {}).items():
        workloads[str(key)] = WorkloadProfile(
            mu=float(w.get("mu", 1.0)),
            capability={str(k): float(v) for k, v in w["capability"].items()},
        )
    return pool, workloads, fanins


def load_profile(path) -> WorkloadProfile:
    doc = _load_yaml(path)
    if "capability" not in doc:
        raise ConfigError(f"{path}: profile needs a capability table")
    return WorkloadProfile(
        mu=float(doc.get("mu", 1.0)),
        capability={str(k): float(v) for k, v in doc["capability"].items()},
    )


def read_trace(path) -> list[TraceJob]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRACE_HEADER:
            raise ConfigError(
                f"{path}: expected header {','.join(TRACE_HEADER)}"
            )
        jobs = []
        for row in reader:
            jobs.append(
                TraceJob(
                    job_id=int(row["job_id"]),
                    arrival_s=float(row["arrival_s"]),
                    min_workers=int(row["minP"]),
                    max_workers=int(row["maxP"]),
                    total_minibatches=int(row["total_minibatches"]),
                    workload_key=row["workload_key"],
                    determinism=row["determinism"],
                )
            )
    if not jobs:
        raise ConfigError(f"{path}: empty trace")
    return jobs


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def metrics_to_csv(metrics: SimMetrics) -> dict[str, str]:
    """Render metrics as {filename: csv text}; byte-stable for equal metrics."""
    jobs = io.StringIO()
    w = csv.writer(jobs, lineterminator="\n")
    w.writerow(["job_id", "arrival_s", "completion_s", "jct_s", "rejected", "reason"])
    for r in metrics.jobs:
        w.writerow(
            [r.job_id, _fmt(r.arrival_s), _fmt(r.completion_s), _fmt(r.jct_s),
             int(r.rejected), r.reason]
        )

    summary = io.StringIO()
    w = csv.writer(summary, lineterminator="\n")
    w.writerow(["mode", "mean_jct_s", "makespan_s", "preemptions", "completed", "rejected"])
    w.writerow(
        [
            metrics.mode,
            _fmt(metrics.mean_jct),
            _fmt(metrics.makespan),
            metrics.preemption_count,
            len(metrics.completed),
            sum(1 for r in metrics.jobs if r.rejected),
        ]
    )

    timeline = io.StringIO()
    w = csv.writer(timeline, lineterminator="\n")
    w.writerow(["time_s", "gpus_allocated"])
    for t, g in metrics.timeline:
        w.writerow([_fmt(t), g])

    return {
        "jobs.csv": jobs.getvalue(),
        "summary.csv": summary.getvalue(),
        "alloc_timeline.csv": timeline.getvalue(),
    }


def write_metrics(metrics: SimMetrics, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in metrics_to_csv(metrics).items():
        p = out / name
        p.write_text(text, encoding="utf-8")
        written.append(p)
    return written


def _parse_layout(entries) -> tuple[ExecutorSpec, ...]:
    if not entries:
        raise ConfigError("layout must list at least one executor")
    specs = []
    for e in entries:
        if "device" not in e:
            raise ConfigError("layout entries need a device kind")
        threads = e.get("threads")
        specs.append(ExecutorSpec(str(e["device"]), None if threads is None else int(threads)))
    return tuple(specs)


def parse_train_config(doc: dict) -> tuple[TrainRunConfig, RunSpec, int, int]:
    """Parse a training document: (config, run spec, steps, dump_every)."""
    try:
        cfg = TrainRunConfig(
            seed=int(doc["seed"]),
            max_workers=int(doc["max_workers"]),
            micro_batch=int(doc.get("micro_batch", 4)),
            dataset_size=int(doc.get("dataset_size", 1000)),
            lr=float(doc.get("lr", 0.02)),
            momentum=float(doc.get("momentum", 0.9)),
            dropout_rate=float(doc.get("dropout_rate", 0.5)),
            jitter=float(doc.get("jitter", 0.1)),
            bucket_capacity=int(doc.get("bucket_capacity", 64)),
            worker_slots=int(doc.get("worker_slots", 2)),
            prefetch_depth=int(doc.get("prefetch_depth", 2)),
            shuffle=bool(doc.get("shuffle", True)),
            determinism=DeterminismMode.from_label(str(doc.get("determinism", "d1"))),
            device_fanins={str(k): int(v) for k, v in doc["devices"].items()},
        )
    except KeyError as exc:
        raise ConfigError(f"training config missing field {exc}") from exc
    restarts = tuple(
        RestartEvent(int(r["after_step"]), _parse_layout(r["layout"]))
        for r in doc.get("restarts", [])
    )
    spec = RunSpec(layout=_parse_layout(doc.get("layout")), restarts=restarts)
    steps = int(doc.get("minibatches", 100))
    dump_every = int(doc.get("dump_params_every", 0))
    return cfg, spec, steps, dump_every


def load_train_config(path) -> tuple[TrainRunConfig, RunSpec, int, int]:
    return parse_train_config(_load_yaml(path))


def load_matrix(path) -> tuple[TrainRunConfig, list[ReproScenario], int]:
    """Parse a matrix file: base config (layout-free) plus the scenarios."""
    doc = _load_yaml(path)
    base = dict(doc.get("config") or {})
    base.setdefault("layout", [{"device": next(iter(base.get("devices", {"x": 0})))}])
    cfg, _spec, _steps, _dump = parse_train_config(base)
    steps = int(doc.get("steps", 100))
    scenarios = []
    for s in doc.get("scenarios", []):
        runs = {}
        for side in ("run_a", "run_b"):
            r = s[side]
            runs[side] = RunSpec(
                layout=_parse_layout(r["layout"]),
                restarts=tuple(
                    RestartEvent(int(e["after_step"]), _parse_layout(e["layout"]))
                    for e in r.get("restarts", [])
                ),
            )
        scenarios.append(ReproScenario(str(s["level"]), runs["run_a"], runs["run_b"]))
    if not scenarios:
        raise ConfigError(f"{path}: no scenarios")
    return cfg, scenarios, steps
