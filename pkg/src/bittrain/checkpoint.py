"""On-demand checkpointing: minimal state, byte-stable binary format.

Layout (all integers little-endian fixed width, all floats raw IEEE-754
binary64 little-endian), sections in this order:

    magic      4 bytes  b"ESCK"
    version    u32      currently 1
    params     u32 count, count * f64            one shared replica
    optstate   f64 lr, f64 momentum, u32 count, count * f64 velocity
    flags      u8 d0, u8 d1, u8 d2
    bucket_map (present iff d1)  u32 capacity, u32 nbuckets,
               per bucket: u32 size, size * u32 indices
    contexts   u32 count, per context: u32 virtual_rank, u64 dropout_rng,
               f64 running_mean, u64 update_count, u64 minibatch_idx
    queue      u32 count, per state: u32 worker_index, u32 worker_slot,
               u64 rng, u64 minibatch_idx
    counters   u64 global_step, u64 epoch

Only one replica of parameters and optimizer state is stored: at a
mini-batch boundary every executor holds identical bytes.  Worker contexts
are stored per worker; the prefetched data-worker states ride along so a
restored run regenerates identical batches.  Unknown versions are
rejected, never skipped.
"""

from __future__ import annotations

import struct

from .buckets import BucketMap, build_buckets_initial
from .engine import (
    ExecutorSpec,
    ExecutorState,
    TrainRunConfig,
    TrainingState,
    WorkerContext,
    assign_ranks,
    check_replica_agreement,
)
from .errors import ConfigError, FormatError, StateError, VersionError
from .model import PARAM_COUNT, OptState, ToyModel, TrackedStat
from .sampling import DataPipeline, WorkerState

MAGIC = b"ESCK"
VERSION = 1

CONTEXT_WIRE_SIZE = 4 + 8 + 8 + 8 + 8  # one serialized worker context


def checkpoint_save(ts: TrainingState) -> bytes:
    """Serialize a training state; same state always yields the same bytes.

    Must be called at a mini-batch boundary (no in-flight gradients).
    """
    for ctx in ts.contexts:
        if ctx.pending_grads is not None:
            raise StateError("checkpoint requested mid-mini-batch (gradients in flight)")
        if ctx.minibatch_idx != ts.global_step:
            raise StateError("checkpoint requested mid-mini-batch (progress skew)")
    check_replica_agreement(ts)

    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)

    values = ts.executors[0].model.values
    out += struct.pack("<I", len(values))
    out += struct.pack(f"<{len(values)}d", *values)

    opt = ts.executors[0].opt
    out += struct.pack("<dd", opt.lr, opt.momentum)
    out += struct.pack("<I", len(opt.velocity))
    out += struct.pack(f"<{len(opt.velocity)}d", *opt.velocity)

    mode = ts.cfg.determinism
    out += struct.pack("<BBB", int(mode.d0), int(mode.d1), int(mode.d2))

    if mode.d1:
        out += struct.pack("<II", ts.bucket_map.capacity, len(ts.bucket_map.buckets))
        for bucket in ts.bucket_map.buckets:
            out += struct.pack("<I", len(bucket))
            out += struct.pack(f"<{len(bucket)}I", *bucket)

    out += struct.pack("<I", len(ts.contexts))
    for ctx in ts.contexts:
        out += struct.pack(
            "<IQdQQ",
            ctx.virtual_rank,
            ctx.dropout_rng,
            ctx.stat.running_mean,
            ctx.stat.update_count,
            ctx.minibatch_idx,
        )

    states = ts.pipeline.drain_for_checkpoint()
    out += struct.pack("<I", len(states))
    for ws in states:
        out += struct.pack("<IIQQ", ws.worker_index, ws.worker_slot, ws.rng, ws.minibatch_idx)

    out += struct.pack("<QQ", ts.global_step, ts.epoch)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise FormatError("checkpoint truncated", self.offset)
        vals = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return vals

    def done(self) -> None:
        if self.offset != len(self.data):
            raise FormatError("trailing bytes after checkpoint payload", self.offset)


def checkpoint_restore(
    data: bytes, layout: list[ExecutorSpec], cfg: TrainRunConfig
) -> TrainingState:
    """Rebuild a training state on a (possibly different) executor layout.

    Workers are redistributed contiguously by virtual rank; every executor
    receives a full copy of the model and optimizer.  With bucket pinning
    (d1) the recorded bucket map is adopted verbatim and arrival-order
    rebuilding stays disabled; otherwise the static initial map is used and
    a rebuild runs at the end of the next mini-batch.
    """
    r = _Reader(data)
    magic = bytes(r.take("<4s")[0])
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    (version,) = r.take("<I")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")

    (param_count,) = r.take("<I")
    if param_count != PARAM_COUNT:
        raise FormatError(f"unexpected parameter count {param_count}", r.offset - 4)
    values = list(r.take(f"<{param_count}d"))

    lr, momentum = r.take("<dd")
    (vel_count,) = r.take("<I")
    if vel_count != param_count:
        raise FormatError(f"velocity count {vel_count} != parameter count", r.offset - 4)
    velocity = list(r.take(f"<{vel_count}d"))

    d0, d1, d2 = r.take("<BBB")
    if (bool(d0), bool(d1), bool(d2)) != (
        cfg.determinism.d0,
        cfg.determinism.d1,
        cfg.determinism.d2,
    ):
        raise ConfigError(
            "checkpoint determinism flags do not match the run configuration"
        )

    bucket_map: BucketMap | None = None
    if d1:
        capacity, nbuckets = r.take("<II")
        buckets = []
        for _ in range(nbuckets):
            (size,) = r.take("<I")
            buckets.append(tuple(r.take(f"<{size}I")))
        bucket_map = BucketMap(capacity=capacity, buckets=tuple(buckets))
        if not bucket_map.covered_exactly_once():
            raise FormatError("bucket map does not partition the parameters", r.offset)

    (context_count,) = r.take("<I")
    if context_count != cfg.max_workers:
        raise ConfigError(
            f"checkpoint holds {context_count} worker contexts, run expects {cfg.max_workers}"
        )
    contexts = []
    for _ in range(context_count):
        rank, rng, mean, count, mb_idx = r.take("<IQdQQ")
        contexts.append(
            WorkerContext(
                virtual_rank=rank,
                dropout_rng=rng,
                stat=TrackedStat(running_mean=mean, update_count=count),
                minibatch_idx=mb_idx,
            )
        )
    contexts.sort(key=lambda c: c.virtual_rank)
    if [c.virtual_rank for c in contexts] != list(range(context_count)):
        raise FormatError("worker contexts do not cover ranks 0..maxP-1", r.offset)

    (state_count,) = r.take("<I")
    queue_states = []
    for _ in range(state_count):
        widx, slot, rng, mb_idx = r.take("<IIQQ")
        queue_states.append(WorkerState(widx, slot, rng, mb_idx))

    global_step, epoch = r.take("<QQ")
    r.done()

    model = ToyModel(values)
    opt = OptState(lr=lr, momentum=momentum, velocity=velocity)
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
    pipeline.restore_queue(queue_states, next_step=global_step)

    return TrainingState(
        cfg=cfg,
        contexts=contexts,
        executors=executors,
        bucket_map=bucket_map
        if bucket_map is not None
        else build_buckets_initial(PARAM_COUNT, cfg.bucket_capacity),
        pipeline=pipeline,
        global_step=global_step,
        epoch=epoch,
        rebuild_pending=not d1,
    )
