"""Gradient bucketing and rank-ordered synchronization.

Gradients are gathered into ordered communication buckets; the bucket map
plus the workers' fixed virtual ranks fully determine the combine order of
the synchronized sum, so pinning both across restarts pins the result.

Two pieces model real-world behavior:

* ``layout_arrival_perm`` -- after a (re)boot the bucket map is rebuilt
  from the order gradient tensors happen to arrive; arrival order is a
  function of the process layout, modeled here by a seeded shuffle keyed
  on the executor layout.  Different layouts after a restart therefore
  yield different bucket maps: the failure mode that bucket pinning
  (elasticity determinism) removes.
* ring-style chunking -- under a ``Tree`` kernel, the combine order of a
  parameter's per-worker contributions is rotated by the chunk of the
  bucket the parameter sits in, exactly the way a ring all-reduce walks
  different chunk offsets.  The ``Sequential`` kernel combines strictly in
  ascending rank order and is independent of the bucket map.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InputError
from .prng import TAG_BUCKET_ARRIVAL, derive_stream, fnv1a64, shuffled_range
from .reduction import ReduceVariant, Sequential, reduce_sum


@dataclass(frozen=True)
class BucketMap:
    """Ordered partition of [0, param_count) into ordered buckets."""

    capacity: int
    buckets: tuple[tuple[int, ...], ...]

    @property
    def param_count(self) -> int:
        return sum(len(b) for b in self.buckets)

    def covered_exactly_once(self) -> bool:
        seen = [i for b in self.buckets for i in b]
        return sorted(seen) == list(range(len(seen)))


def build_buckets_initial(param_count: int, capacity: int) -> BucketMap:
    """Static bucket map: descending parameter index (reverse of layer
    order), packed greedily into buckets of at most ``capacity``."""
    if capacity < 1:
        raise InputError(f"bucket capacity must be >= 1, got {capacity}")
    order = list(range(param_count - 1, -1, -1))
    return _pack(order, capacity)


def rebuild_buckets_first_minibatch(arrival_perm: list[int], capacity: int) -> BucketMap:
    """Repack buckets in gradient arrival order (greedy, same capacity)."""
    if sorted(arrival_perm) != list(range(len(arrival_perm))):
        raise InputError("arrival order is not a permutation of the parameter indices")
    return _pack(list(arrival_perm), capacity)


def _pack(order: list[int], capacity: int) -> BucketMap:
    buckets = tuple(
        tuple(order[i : i + capacity]) for i in range(0, len(order), capacity)
    )
    return BucketMap(capacity=capacity, buckets=buckets)


def layout_arrival_perm(param_count: int, layout_key: list[tuple[str, int]]) -> list[int]:
    """Seeded model of gradient arrival order for a given executor layout.

    ``layout_key`` is the ordered list of (device_kind, thread_count) per
    executor.  The same layout always produces the same permutation; for
    non-trivial parameter counts, different layouts produce different
    permutations with probability ~1.
    """
    words = [TAG_BUCKET_ARRIVAL, len(layout_key)]
    for kind, threads in layout_key:
        words.append(fnv1a64(kind.encode("utf-8")))
        words.append(threads)
    return shuffled_range(param_count, derive_stream(*words))


def allreduce(
    replicas: list[list[float]], bucket_map: BucketMap, variant: ReduceVariant
) -> list[float]:
    """Combine per-worker gradient replicas into the synchronized mean.

    ``replicas`` must be ordered by ascending virtual rank.  For each
    parameter the contributions are summed with ``reduce_sum(variant)`` and
    divided by the replica count; the result is shared by every executor.

    Combine order: ``Sequential`` uses ascending rank for every parameter.
    ``Tree`` kernels start the rank cycle at the parameter's ring chunk
    (``chunk = pos * nreplicas // bucket_len``), so the result depends on
    where the bucket map placed the parameter -- the modeled communication
    nondeterminism.  Output is a pure function of (replicas-with-ranks,
    bucket map, variant): executor layout never enters.
    """
    if not replicas:
        raise InputError("need at least one gradient replica")
    nparams = len(replicas[0])
    for rep in replicas:
        if len(rep) != nparams:
            raise InputError("gradient replicas have mismatched lengths")
    if bucket_map.param_count != nparams:
        raise InputError(
            f"bucket map covers {bucket_map.param_count} parameters, replicas have {nparams}"
        )

    nrep = len(replicas)
    sequential = isinstance(variant, Sequential)
    out = [0.0] * nparams
    for bucket in bucket_map.buckets:
        blen = len(bucket)
        for pos, p in enumerate(bucket):
            if sequential:
                contributions = [rep[p] for rep in replicas]
            else:
                start = pos * nrep // blen
                contributions = [replicas[(start + k) % nrep][p] for k in range(nrep)]
            out[p] = reduce_sum(contributions, variant) / nrep
    return out
