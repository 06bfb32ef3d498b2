"""Training runs with restart schedules, and the S1-S5 reproducibility ladder.

The ladder compares pairs of runs under increasingly hostile resource
changes:

* S1 -- rerun on the identical single executor,
* S2 -- rerun on the identical multi-executor layout,
* S3 -- same executor count, different device kinds,
* S4 -- different executor counts, with mid-run restarts (same kind),
* S5 -- different counts and kinds, with restarts.

A scenario passes when both runs produce bitwise-equal loss logs and
final parameters.  Which levels a determinism mode is expected to pass:
d0 guarantees S1-S2, d1 adds S4, d1+d2 guarantees all five.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .engine import (
    DeterminismMode,
    ExecutorSpec,
    TrainRunConfig,
    TrainingState,
    apply_layout,
    init_training,
    run_minibatch,
)
from .errors import ConfigError
from .runlog import Divergence, RunLog, RunRecord, bitdiff, param_fingerprint

LEVELS = ("S1", "S2", "S3", "S4", "S5")


@dataclass(frozen=True)
class RestartEvent:
    """Checkpoint/restore onto a new layout after completing ``after_step``."""

    after_step: int
    layout: tuple[ExecutorSpec, ...]


@dataclass(frozen=True)
class RunSpec:
    """One run: initial layout plus an optional restart schedule."""

    layout: tuple[ExecutorSpec, ...]
    restarts: tuple[RestartEvent, ...] = ()


def run_training(
    cfg: TrainRunConfig,
    spec: RunSpec,
    steps: int,
    dump_every: int = 0,
) -> tuple[RunLog, TrainingState]:
    """Train ``steps`` mini-batches, applying the restart schedule."""
    restart_at = {r.after_step: r.layout for r in spec.restarts}
    if any(s < 1 or s >= steps for s in restart_at):
        raise ConfigError("restarts must fall strictly inside the run")
    log = RunLog(
        max_workers=cfg.max_workers,
        determinism=cfg.determinism.label,
        seed=cfg.seed,
    )
    ts = init_training(cfg, list(spec.layout))
    for _ in range(steps):
        losses = run_minibatch(ts)
        values = ts.executors[0].model.values
        log.add(
            RunRecord(
                step=ts.global_step,
                losses=losses,
                param_hash=param_fingerprint(values),
                params=list(values)
                if dump_every and ts.global_step % dump_every == 0
                else None,
            )
        )
        if ts.global_step in restart_at:
            ts = apply_layout(ts, list(restart_at[ts.global_step]))
    return log, ts


@dataclass(frozen=True)
class ReproScenario:
    """Two run configurations whose results the ladder compares."""

    level: str
    run_a: RunSpec
    run_b: RunSpec


@dataclass
class ScenarioResult:
    level: str
    divergence: Divergence | None
    final_equal: bool

    @property
    def bitwise_equal(self) -> bool:
        return self.divergence is None and self.final_equal


@dataclass
class MatrixReport:
    mode: str
    results: list[ScenarioResult] = field(default_factory=list)

    def failed_guarantees(self) -> list[str]:
        guaranteed = guaranteed_levels(self.mode)
        return [
            r.level for r in self.results if r.level in guaranteed and not r.bitwise_equal
        ]


def guaranteed_levels(mode_label: str) -> set[str]:
    mode = DeterminismMode.from_label(mode_label)
    if mode.d1 and mode.d2:
        return {"S1", "S2", "S3", "S4", "S5"}
    if mode.d1:
        return {"S1", "S2", "S4"}
    return {"S1", "S2"}


def default_matrix(kind_a: str, kind_b: str, steps: int) -> list[ReproScenario]:
    """The shipped ladder for two device kinds; restarts at mid-run."""
    half = steps // 2
    one_a = (ExecutorSpec(kind_a),)
    four_a = tuple(ExecutorSpec(kind_a) for _ in range(4))
    two_a = tuple(ExecutorSpec(kind_a) for _ in range(2))
    two_b = tuple(ExecutorSpec(kind_b) for _ in range(2))
    three_a = tuple(ExecutorSpec(kind_a) for _ in range(3))
    mixed = (ExecutorSpec(kind_a), ExecutorSpec(kind_b))
    return [
        ReproScenario("S1", RunSpec(one_a), RunSpec(one_a)),
        ReproScenario("S2", RunSpec(four_a), RunSpec(four_a)),
        ReproScenario("S3", RunSpec(two_a), RunSpec(two_b)),
        ReproScenario(
            "S4",
            RunSpec(four_a),
            RunSpec(two_a, restarts=(RestartEvent(half, three_a),)),
        ),
        ReproScenario(
            "S5",
            RunSpec(four_a),
            RunSpec(two_b, restarts=(RestartEvent(half, mixed),)),
        ),
    ]


def run_scenario(
    cfg: TrainRunConfig, scenario: ReproScenario, steps: int
) -> ScenarioResult:
    log_a, ts_a = run_training(cfg, scenario.run_a, steps)
    log_b, ts_b = run_training(cfg, scenario.run_b, steps)
    div = bitdiff(log_a, log_b)
    final_equal = ts_a.executors[0].model.values == ts_b.executors[0].model.values
    return ScenarioResult(scenario.level, div, final_equal)


def run_matrix(
    cfg: TrainRunConfig, scenarios: list[ReproScenario], steps: int
) -> MatrixReport:
    report = MatrixReport(mode=cfg.determinism.label)
    for scenario in scenarios:
        report.results.append(run_scenario(cfg, scenario, steps))
    return report
