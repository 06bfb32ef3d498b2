"""Deterministic distributed sampling and the shared data-worker pool.

The batch a logical worker trains on is a pure function of
``(job seed, epoch, mini-batch index, worker index)`` -- never of how many
data-worker slots exist or of how they interleave.  That property is what
lets a restored run regenerate byte-identical batches on any layout.

The queuing buffer records the per-(mini-batch, worker) RNG states that
data workers have prefetched but training has not yet consumed; those
states travel inside checkpoints so a restored run replays them verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError, ProgressError
from .model import INPUT_DIM
from .prng import TAG_DATASET, TAG_DATA_WORKER, derive_stream, rng_uniform01, shuffled_range

Row = tuple[tuple[float, ...], float]


def make_dataset(seed: int, n: int, dim: int) -> list[Row]:
    """Synthetic regression rows, all components uniform in [-1, 1)."""
    state = derive_stream(TAG_DATASET, seed)
    rows = []
    for _ in range(n):
        xs = []
        for _ in range(dim):
            state, u = rng_uniform01(state)
            xs.append(u * 2.0 - 1.0)
        state, u = rng_uniform01(state)
        rows.append((tuple(xs), u * 2.0 - 1.0))
    return rows


@dataclass(frozen=True)
class SamplePlan:
    """One epoch's index distribution across all logical workers.

    ``micro_batch`` rows go to each of ``total_workers`` workers per
    mini-batch; the epoch tail that does not fill a whole global batch is
    dropped (drop-last).
    """

    seed: int
    epoch: int
    dataset_size: int
    total_workers: int
    micro_batch: int = 1
    shuffle: bool = True

    @property
    def global_batch(self) -> int:
        return self.total_workers * self.micro_batch

    @property
    def steps_per_epoch(self) -> int:
        return self.dataset_size // self.global_batch


def epoch_indices(plan: SamplePlan) -> list[list[int]]:
    """Per-worker ordered index lists for one epoch.

    The shuffled order (Fisher-Yates seeded with ``seed XOR epoch``) is
    dealt round-robin: position ``t`` goes to worker ``t mod total_workers``,
    order preserved.  Positions past the last full global batch are dropped.
    """
    if plan.total_workers < 1:
        raise ConfigError("total_workers must be >= 1")
    if plan.dataset_size < plan.total_workers:
        raise ConfigError("dataset smaller than the worker count")
    if plan.steps_per_epoch < 1:
        raise ConfigError("dataset smaller than one global batch")
    if plan.shuffle:
        order = shuffled_range(plan.dataset_size, plan.seed ^ plan.epoch)
    else:
        order = list(range(plan.dataset_size))
    usable = plan.steps_per_epoch * plan.global_batch
    nw = plan.total_workers
    return [order[k:usable:nw] for k in range(nw)]


@dataclass
class WorkerState:
    """State a data worker needs to build one worker's micro-batch.

    ``worker_slot`` records which shared slot processed it; it is metadata
    only and never influences the produced bytes.
    """

    worker_index: int
    worker_slot: int
    rng: int
    minibatch_idx: int


def worker_rng(seed: int, epoch: int, local_step: int, worker_index: int) -> int:
    """The RNG state the dedicated-GPU reference run would hold for this task."""
    return derive_stream(TAG_DATA_WORKER, seed, epoch, local_step, worker_index)


class DataPipeline:
    """Shared data-worker pool with a progress-ordered queuing buffer.

    ``worker_slots`` models the number of shared loader slots; any value
    produces identical batches because all randomness is keyed to the
    (mini-batch, worker) task, not to slot identity or timing.
    """

    def __init__(
        self,
        seed: int,
        dataset_size: int,
        total_workers: int,
        micro_batch: int,
        jitter: float = 0.0,
        worker_slots: int = 1,
        prefetch_depth: int = 2,
        shuffle: bool = True,
    ):
        if worker_slots < 1:
            raise ConfigError("need at least one data-worker slot")
        if prefetch_depth < 0:
            raise ConfigError("prefetch_depth must be >= 0")
        self.seed = seed
        self.dataset_size = dataset_size
        self.total_workers = total_workers
        self.micro_batch = micro_batch
        self.jitter = jitter
        self.worker_slots = worker_slots
        self.prefetch_depth = prefetch_depth
        self.shuffle = shuffle
        self.dataset = make_dataset(seed, dataset_size, dim=INPUT_DIM)
        self.steps_per_epoch = SamplePlan(
            seed, 0, dataset_size, total_workers, micro_batch, shuffle
        ).steps_per_epoch
        if self.steps_per_epoch < 1:
            raise ConfigError("dataset smaller than one global batch")
        # Queue of prefetched-but-unconsumed worker states, keyed (step, worker).
        self._queue: dict[tuple[int, int], WorkerState] = {}
        self._next_step = [0] * total_workers
        self._epoch_lists: dict[int, list[list[int]]] = {}

    def _lists_for_epoch(self, epoch: int) -> list[list[int]]:
        if epoch not in self._epoch_lists:
            plan = SamplePlan(
                self.seed, epoch, self.dataset_size, self.total_workers,
                self.micro_batch, self.shuffle,
            )
            self._epoch_lists[epoch] = epoch_indices(plan)
        return self._epoch_lists[epoch]

    def _make_state(self, step: int, worker: int) -> WorkerState:
        epoch, local = divmod(step, self.steps_per_epoch)
        slot = (step * self.total_workers + worker) % self.worker_slots
        return WorkerState(worker, slot, worker_rng(self.seed, epoch, local, worker), step)

    def _produce(self, ws: WorkerState) -> list[Row]:
        epoch, local = divmod(ws.minibatch_idx, self.steps_per_epoch)
        per_worker = self._lists_for_epoch(epoch)[ws.worker_index]
        idxs = per_worker[local * self.micro_batch : (local + 1) * self.micro_batch]
        rng = ws.rng
        rows: list[Row] = []
        for idx in idxs:
            x, y = self.dataset[idx]
            if self.jitter != 0.0:
                rng, u = rng_uniform01(rng)
                x = tuple(xi + (u - 0.5) * self.jitter for xi in x)
            rows.append((x, y))
        return rows

    def batch(self, worker: int, minibatch_idx: int) -> list[Row]:
        """Produce and consume the micro-batch for (minibatch_idx, worker).

        Batches must be consumed strictly in progress order per worker.
        """
        expected = self._next_step[worker]
        if minibatch_idx < expected:
            raise ProgressError(
                f"mini-batch {minibatch_idx} of worker {worker} was already consumed"
            )
        if minibatch_idx > expected:
            raise ProgressError(
                f"worker {worker} must consume mini-batch {expected} before {minibatch_idx}"
            )
        ws = self._queue.pop((minibatch_idx, worker), None)
        if ws is None:
            ws = self._make_state(minibatch_idx, worker)
        rows = self._produce(ws)
        self._next_step[worker] = minibatch_idx + 1
        # The shared workers run ahead of training by prefetch_depth steps.
        for ahead in range(1, self.prefetch_depth + 1):
            key = (minibatch_idx + ahead, worker)
            if key not in self._queue:
                self._queue[key] = self._make_state(*key)
        return rows

    def drain_for_checkpoint(self) -> list[WorkerState]:
        """Prefetched worker states not yet consumed, in (step, worker) order."""
        return [self._queue[k] for k in sorted(self._queue)]

    def restore_queue(self, states: list[WorkerState], next_step: int) -> None:
        """Adopt checkpointed worker states and training progress."""
        self._queue = {(ws.minibatch_idx, ws.worker_index): ws for ws in states}
        self._next_step = [next_step] * self.total_workers
