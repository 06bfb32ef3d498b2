"""Time-sliced elastic training runtime.

A job always has ``max_workers`` logical workers, each with a fixed
virtual rank.  Physical executors (one per device context) host one or
more workers and time-slice them per mini-batch: the input is split by
virtual rank, workers run forward/backward serially in ascending rank on
their executor's shared model replica, non-final workers park their
gradients host-side, and after all workers finish one synchronized update
is applied and mirrored to every executor.

Because every ingredient -- batches, dropout streams, tracked statistics,
combine order -- is keyed to the virtual rank rather than to the physical
layout, the post-step parameters are bitwise independent of how workers
are packed onto executors.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .buckets import (
    BucketMap,
    build_buckets_initial,
    layout_arrival_perm,
    allreduce,
    rebuild_buckets_first_minibatch,
)
from .errors import ConfigError, CorruptionError
from .model import (
    PARAM_COUNT,
    Batch,
    OptState,
    ToyModel,
    TrackedStat,
    forward_backward,
    sgd_step,
)
from .prng import TAG_DROPOUT, derive_stream
from .reduction import KernelProfile
from .sampling import DataPipeline


@dataclass(frozen=True)
class DeterminismMode:
    """Determinism levels: d0 fixed-parallelism, d1 elasticity, d2 heterogeneity.

    d1 implies d0.  d2 may combine with either.
    """

    d0: bool = True
    d1: bool = False
    d2: bool = False

    def __post_init__(self):
        if self.d1 and not self.d0:
            raise ConfigError("d1 requires d0")

    @classmethod
    def from_label(cls, label: str) -> "DeterminismMode":
        table = {
            "d0": cls(d0=True),
            "d1": cls(d0=True, d1=True),
            "d1d2": cls(d0=True, d1=True, d2=True),
            "d0d2": cls(d0=True, d2=True),
        }
        key = label.strip().lower()
        if key not in table:
            raise ConfigError(f"unknown determinism mode {label!r}")
        return table[key]

    @property
    def label(self) -> str:
        if self.d1 and self.d2:
            return "d1d2"
        if self.d1:
            return "d1"
        if self.d2:
            return "d0d2"
        return "d0"


@dataclass(frozen=True)
class ExecutorSpec:
    """One executor in a layout: a device kind plus an optional thread count.

    When ``threads`` is None for every spec, workers are spread contiguously
    and as evenly as possible.
    """

    device_kind: str
    threads: int | None = None


@dataclass
class WorkerContext:
    """All state owned by one logical training worker."""

    virtual_rank: int
    dropout_rng: int
    stat: TrackedStat
    pending_grads: list[float] | None = None
    minibatch_idx: int = 0


@dataclass
class ExecutorState:
    """A device context hosting one model/optimizer replica shared by its workers."""

    device_kind: str
    kernel_profile: KernelProfile
    assigned: list[int]
    model: ToyModel
    opt: OptState


@dataclass(frozen=True)
class TrainRunConfig:
    """Everything a training run depends on besides the executor layout."""

    seed: int
    max_workers: int
    micro_batch: int = 4
    dataset_size: int = 1000
    lr: float = 0.02
    momentum: float = 0.9
    dropout_rate: float = 0.5
    jitter: float = 0.1
    bucket_capacity: int = 64
    worker_slots: int = 2
    prefetch_depth: int = 2
    shuffle: bool = True
    determinism: DeterminismMode = DeterminismMode()
    device_fanins: dict[str, int] = field(default_factory=lambda: {"cpu": 2})

    def kernel_profile(self, device_kind: str) -> KernelProfile:
        if device_kind not in self.device_fanins:
            raise ConfigError(f"unknown device kind {device_kind!r}")
        if self.determinism.d2:
            return KernelProfile.device_agnostic(device_kind)
        return KernelProfile.native(device_kind, self.device_fanins[device_kind])


@dataclass
class TrainingState:
    """The unit of checkpointing: worker contexts, executor replicas, progress."""

    cfg: TrainRunConfig
    contexts: list[WorkerContext]
    executors: list[ExecutorState]
    bucket_map: BucketMap
    pipeline: DataPipeline
    global_step: int = 0
    epoch: int = 0
    rebuild_pending: bool = False

    @property
    def max_workers(self) -> int:
        return self.cfg.max_workers

    def layout_key(self) -> list[tuple[str, int]]:
        return [(ex.device_kind, len(ex.assigned)) for ex in self.executors]


def floats_to_bytes(values: list[float]) -> bytes:
    return struct.pack(f"<{len(values)}d", *values)


def assign_ranks(specs: list[ExecutorSpec], max_workers: int) -> list[tuple[str, list[int]]]:
    """Distribute ranks 0..max_workers-1 contiguously over the executors.

    Explicit thread counts are honored (and must sum to max_workers);
    otherwise the split is contiguous and balanced, larger shares first.
    """
    if not specs:
        raise ConfigError("layout needs at least one executor")
    explicit = [s.threads for s in specs]
    if any(t is not None for t in explicit):
        if any(t is None for t in explicit):
            raise ConfigError("either all executors or none may pin thread counts")
        if any(t < 1 for t in explicit):
            raise ConfigError("executor thread counts must be >= 1")
        if sum(explicit) != max_workers:
            raise ConfigError(
                f"thread counts sum to {sum(explicit)}, expected {max_workers}"
            )
        counts = list(explicit)
    else:
        n = len(specs)
        if n > max_workers:
            raise ConfigError(f"{n} executors for only {max_workers} workers")
        base, extra = divmod(max_workers, n)
        counts = [base + (1 if i < extra else 0) for i in range(n)]
    out = []
    cursor = 0
    for spec, count in zip(specs, counts):
        out.append((spec.device_kind, list(range(cursor, cursor + count))))
        cursor += count
    return out


def init_training(cfg: TrainRunConfig, layout: list[ExecutorSpec]) -> TrainingState:
    """Fresh training state on the given executor layout."""
    model = ToyModel.init_random(cfg.seed)
    opt = OptState.fresh(cfg.lr, cfg.momentum)
    contexts = [
        WorkerContext(
            virtual_rank=rank,
            dropout_rng=derive_stream(TAG_DROPOUT, cfg.seed, rank),
            stat=TrackedStat(),
        )
        for rank in range(cfg.max_workers)
    ]
    executors = [
        ExecutorState(
            device_kind=kind,
            kernel_profile=cfg.kernel_profile(kind),
            assigned=ranks,
            model=model.copy(),
            opt=opt.copy(),
        )
        for kind, ranks in assign_ranks(layout, cfg.max_workers)
    ]
    pipeline = DataPipeline(
        seed=cfg.seed,
        dataset_size=cfg.dataset_size,
        total_workers=cfg.max_workers,
        micro_batch=cfg.micro_batch,
        jitter=cfg.jitter,
        worker_slots=cfg.worker_slots,
        prefetch_depth=cfg.prefetch_depth,
        shuffle=cfg.shuffle,
    )
    return TrainingState(
        cfg=cfg,
        contexts=contexts,
        executors=executors,
        bucket_map=build_buckets_initial(PARAM_COUNT, cfg.bucket_capacity),
        pipeline=pipeline,
        # Arrival-order bucket rebuilding is the d0 behavior; elasticity
        # determinism pins the static map instead.
        rebuild_pending=not cfg.determinism.d1,
    )


def check_replica_agreement(ts: TrainingState) -> None:
    """All executors must hold bitwise-equal model and optimizer state."""
    ref_model = floats_to_bytes(ts.executors[0].model.values)
    ref_vel = floats_to_bytes(ts.executors[0].opt.velocity)
    for ex in ts.executors[1:]:
        if floats_to_bytes(ex.model.values) != ref_model:
            raise CorruptionError(
                f"model replica on executor of kind {ex.device_kind!r} diverged"
            )
        if floats_to_bytes(ex.opt.velocity) != ref_vel:
            raise CorruptionError(
                f"optimizer replica on executor of kind {ex.device_kind!r} diverged"
            )


def split_by_rank(global_batch: Batch, max_workers: int) -> list[Batch]:
    """Row t of the global batch belongs to the worker with rank t mod P,
    matching the round-robin deal of the distributed sampler."""
    if len(global_batch) == 0 or len(global_batch) % max_workers != 0:
        raise ConfigError(
            f"global batch of {len(global_batch)} rows is not divisible by {max_workers}"
        )
    return [global_batch[k :: max_workers] for k in range(max_workers)]


def run_minibatch(ts: TrainingState, global_batch: Batch | None = None) -> list[float]:
    """Execute one mini-batch; returns per-worker losses by ascending rank.

    With ``global_batch=None`` the micro-batches come from the pipeline
    (which produces exactly the round-robin split of the epoch order).
    """
    cfg = ts.cfg
    nw = cfg.max_workers
    if global_batch is not None:
        micro = split_by_rank(global_batch, nw)
    else:
        micro = [ts.pipeline.batch(rank, ts.global_step) for rank in range(nw)]

    check_replica_agreement(ts)

    losses = [0.0] * nw
    replicas: list[list[float] | None] = [None] * nw
    for ex in ts.executors:
        last_rank = ex.assigned[-1]
        for rank in ex.assigned:
            ctx = ts.contexts[rank]
            loss, grads, new_rng, new_stat = forward_backward(
                ex.model,
                micro[rank],
                rank,
                ctx.dropout_rng,
                ctx.stat,
                ex.kernel_profile.reduce_variant,
                cfg.dropout_rate,
            )
            ctx.dropout_rng = new_rng
            ctx.stat = new_stat
            losses[rank] = loss
            replicas[rank] = grads
            if rank != last_rank:
                # Host-side copy; survives untouched until synchronization.
                ctx.pending_grads = list(grads)

    comm_variant = ts.executors[0].kernel_profile.reduce_variant
    synced = allreduce([replicas[r] for r in range(nw)], ts.bucket_map, comm_variant)

    new_model, new_opt = sgd_step(ts.executors[0].model, ts.executors[0].opt, synced)
    for ex in ts.executors:
        ex.model = new_model.copy()
        ex.opt = new_opt.copy()

    for ctx in ts.contexts:
        ctx.pending_grads = None
        ctx.minibatch_idx += 1
    ts.global_step += 1
    ts.epoch = ts.global_step // ts.pipeline.steps_per_epoch

    if ts.rebuild_pending:
        # Without bucket pinning, the map is rebuilt from the (layout-keyed)
        # arrival order at the end of the first mini-batch after boot.
        perm = layout_arrival_perm(PARAM_COUNT, ts.layout_key())
        ts.bucket_map = rebuild_buckets_first_minibatch(perm, cfg.bucket_capacity)
        ts.rebuild_pending = False
    return losses


def apply_layout(ts: TrainingState, layout: list[ExecutorSpec]) -> TrainingState:
    """Checkpoint, then restore onto a new executor layout (a restart)."""
    from .checkpoint import checkpoint_restore, checkpoint_save

    return checkpoint_restore(checkpoint_save(ts), layout, ts.cfg)


def reconfigure(ts: TrainingState, plan, pool) -> TrainingState:
    """Reconfigure onto a planner configuration, validated against the pool.

    Equivalent to checkpoint-save followed by restore on the plan's layout;
    training resumes at the same global step.
    """
    layout = plan_layout(plan, pool, ts.cfg.max_workers)
    return apply_layout(ts, layout)


def plan_layout(plan, pool, max_workers: int) -> list[ExecutorSpec]:
    """Expand a planner configuration into executor specs.

    Executors are ordered by (pool type order, GPU index, executor slot);
    workers fill them contiguously, so with over-provisioned capacity the
    trailing executors host fewer (possibly zero) workers and empty ones
    are dropped.
    """
    if plan.cu_capacity < max_workers:
        raise ConfigError(
            f"plan capacity {plan.cu_capacity} cannot host {max_workers} workers"
        )
    specs: list[ExecutorSpec] = []
    remaining = max_workers
    for i, dtype in enumerate(pool.types):
        if plan.nums[i] > dtype.count:
            raise ConfigError(
                f"plan uses {plan.nums[i]} GPUs of {dtype.name!r}, pool has {dtype.count}"
            )
        for _gpu in range(plan.nums[i]):
            for _ex in range(plan.executors[i]):
                take = min(plan.threads[i], remaining)
                if take > 0:
                    specs.append(ExecutorSpec(dtype.name, take))
                    remaining -= take
    if remaining != 0:
        raise ConfigError("plan layout could not host every worker")
    return specs


def executor_peak_mu(threads: int, workload_mu: float, context_mu: float = 0.75) -> float:
    """Peak memory of one time-slicing executor, in MU.

    Workers share the executor's replica and working set, so the peak is
    independent of how many workers it hosts.
    """
    if threads < 1:
        raise ConfigError("an executor hosts at least one worker")
    return context_mu + workload_mu


def packing_peak_mu(workers: int, workload_mu: float, context_mu: float = 0.75) -> float:
    """Peak memory of the worker-packing baseline: every packed worker owns
    a full context plus working set, so the peak grows linearly."""
    if workers < 1:
        raise ConfigError("need at least one packed worker")
    return workers * (context_mu + workload_mu)
