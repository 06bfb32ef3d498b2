"""Heterogeneity-aware worker allocation planning.

A job's logical workers each consume one computation unit (CU) and its
executors one memory unit (MU) of peak memory.  Device capabilities are
continuous (mini-batches/second) while CU assignments are integers, so any
mapping wastes some capability; the analytical model here quantifies that
waste and the resulting throughput:

    cu_capacity = sum_i nums_i * A_i            (must cover max_workers)
    f_overload  = max_{i used} A_i / C_i        (the straggler's load)
    waste       = sum_{i used} (C_i - A_i / f_overload)
                  + (cu_capacity - max_workers) / f_overload
    waste_norm  = 100 * waste / sum_i nums_i * C_i      (percent)
    perf        = sum_i nums_i * C_i - waste

Multiple executors per GPU trade memory for concurrency: with m executors
the per-GPU capability becomes m * C_i * I_i(m) (interference-adjusted)
and the per-GPU CU count m * A_i.

The intra-job planner enumerates feasible configurations, picks the
highest-throughput one for the current grant, and emits scale-out
proposals of exactly one extra GPU, priced by their speedup.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .errors import ConfigError, ConstraintError

DEFAULT_WASTE_THRESHOLD = 0.30


@dataclass(frozen=True)
class DeviceType:
    """One GPU type: availability, memory budget, and multi-executor interference."""

    name: str
    count: int
    memory_mu: float
    interference: Mapping[int, float] = field(default_factory=lambda: {1: 1.0})

    def __post_init__(self):
        if self.count < 0:
            raise ConfigError(f"negative GPU count for {self.name!r}")
        if self.interference.get(1) != 1.0:
            raise ConfigError(f"interference of a single executor must be 1.0 ({self.name!r})")
        last = 1.0
        for m in sorted(self.interference):
            i_m = self.interference[m]
            if not (0.0 < i_m <= 1.0):
                raise ConfigError(f"interference out of (0, 1] for {self.name!r} at m={m}")
            if i_m > last + 1e-12:
                raise ConfigError(f"interference must be non-increasing ({self.name!r})")
            last = i_m


@dataclass(frozen=True)
class DevicePool:
    """Available GPUs, ordered by declaration (order is part of the contract)."""

    types: tuple[DeviceType, ...]

    def __post_init__(self):
        names = [t.name for t in self.types]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate device type names in pool")

    def index_of(self, name: str) -> int:
        for i, t in enumerate(self.types):
            if t.name == name:
                return i
        raise ConfigError(f"unknown device type {name!r}")

    def counts(self) -> dict[str, int]:
        return {t.name: t.count for t in self.types}

    def restrict(self, granted: Mapping[str, int]) -> "DevicePool":
        """Same types and order, counts replaced by the granted ones."""
        return DevicePool(
            tuple(replace(t, count=min(granted.get(t.name, 0), t.count)) for t in self.types)
        )

    def with_extra(self, name: str, granted: Mapping[str, int]) -> "DevicePool":
        extra = dict(granted)
        extra[name] = extra.get(name, 0) + 1
        return self.restrict(extra)


@dataclass(frozen=True)
class WorkloadProfile:
    """Workload view of the pool: per-type capability and per-executor memory."""

    mu: float
    capability: Mapping[str, float]

    def __post_init__(self):
        for name, c in self.capability.items():
            if c <= 0:
                raise ConfigError(f"capability must be positive for usable type {name!r}")


@dataclass(frozen=True)
class PlanConfig:
    """One candidate mapping <nums, executors, threads> with its metrics.

    Arrays are aligned with the pool's type order. ``threads`` is workers
    per executor, so the per-GPU CU count is executors * threads.
    """

    nums: tuple[int, ...]
    executors: tuple[int, ...]
    threads: tuple[int, ...]
    cu_capacity: int
    waste: float
    waste_norm: float
    perf: float

    @property
    def total_gpus(self) -> int:
        return sum(self.nums)


@dataclass(frozen=True)
class Proposal:
    """Scale-out offer: the configuration reached by one extra GPU."""

    config: PlanConfig
    device_type: str
    speedup_per_gpu: float
    gpu_delta: int = 1


class FallbackDecision(enum.Enum):
    KEEP = "keep"
    REVERT = "revert"


def waste_model(
    nums: Sequence[int],
    cus_per_gpu: Sequence[float],
    capability_per_gpu: Sequence[float],
    max_workers: int,
) -> tuple[float, float, float, float, float]:
    """Evaluate the analytical model; returns
    ``(cu_capacity, f_overload, waste, waste_norm, perf)``.

    ``cus_per_gpu`` and ``capability_per_gpu`` are the effective per-GPU
    values (already multi-executor adjusted when applicable).
    """
    used = [i for i, n in enumerate(nums) if n > 0]
    if not used or all(cus_per_gpu[i] == 0 for i in used):
        raise ConfigError("no GPUs carry any workers")
    capacity = 0.0
    for i in used:
        capacity += nums[i] * cus_per_gpu[i]
    if capacity < max_workers:
        raise ConstraintError(
            f"capacity {capacity} cannot host {max_workers} workers"
        )
    f_overload = max(cus_per_gpu[i] / capability_per_gpu[i] for i in used)
    waste = 0.0
    for i in used:
        waste += capability_per_gpu[i] - cus_per_gpu[i] / f_overload
    waste += (capacity - max_workers) / f_overload
    # The analytical waste is nonnegative (every A_i/f_overload <= C_i and
    # the capacity surplus is >= 0); clamp the float evaluation so rounding
    # dust on exactly-balanced configurations cannot turn it negative.
    if waste < 0.0:
        waste = 0.0
    total_capability = 0.0
    for i in used:
        total_capability += nums[i] * capability_per_gpu[i]
    waste_norm = waste / total_capability * 100.0
    perf = total_capability - waste
    return capacity, f_overload, waste, waste_norm, perf


def multi_executor_adjust(
    m: int,
    capability: float,
    interference: Mapping[int, float],
    cus_per_executor: int,
) -> tuple[float, int]:
    """Effective (capability, CU count) of one GPU running m executors."""
    if m < 1:
        raise ConfigError("executor count must be >= 1")
    if m not in interference:
        raise ConstraintError(f"{m} executors per GPU is not feasible for this type")
    return m * capability * interference[m], m * cus_per_executor


def _feasible_executor_counts(dtype: DeviceType, profile: WorkloadProfile) -> list[int]:
    return [
        m
        for m in sorted(dtype.interference)
        if m >= 1 and m * profile.mu <= dtype.memory_mu
    ]


def _type_options(
    dtype: DeviceType,
    profile: WorkloadProfile,
    max_workers: int,
    cu_candidates: set[int] | None,
) -> list[tuple[int, int, int]]:
    """(num, executors, threads) choices for one type, (0,0,0) meaning unused."""
    options = [(0, 0, 0)]
    cap = profile.capability.get(dtype.name)
    if cap is None or dtype.count == 0:
        return options
    ms = _feasible_executor_counts(dtype, profile)
    for num in range(1, min(dtype.count, max_workers) + 1):
        for m in ms:
            for t in range(1, max_workers // m + 1):
                if cu_candidates is not None and m * t not in cu_candidates:
                    continue
                options.append((num, m, t))
    return options


def _cu_grid(pool: DevicePool, profile: WorkloadProfile, max_workers: int) -> dict[str, set[int]]:
    """Per-GPU CU candidates from the integer-approximation generator.

    The grid of target overloads is t = k / C_max for k = 1..max_workers;
    each type contributes floor(t*C_i) and ceil(t*C_i) (plus floor+1 to be
    safe against the floor landing one short under float rounding).
    """
    usable = [t for t in pool.types if t.name in profile.capability and t.count > 0]
    if not usable:
        return {}
    c_max = max(profile.capability[t.name] for t in usable)
    grid: dict[str, set[int]] = {t.name: set() for t in usable}
    for k in range(1, max_workers + 1):
        ratio = k / c_max
        for t in usable:
            target = ratio * profile.capability[t.name]
            for cand in (math.floor(target), math.floor(target) + 1, math.ceil(target)):
                if 1 <= cand <= max_workers:
                    grid[t.name].add(cand)
    return grid


def enumerate_configs(
    pool: DevicePool,
    profile: WorkloadProfile,
    min_workers: int,
    max_workers: int,
    waste_threshold: float = DEFAULT_WASTE_THRESHOLD,
    single_type_only: bool = False,
    method: str = "exhaustive",
    max_gpus: int | None = None,
) -> list[PlanConfig]:
    """All feasible configurations, best throughput first.

    Feasible means: per-type GPU counts within the pool, executors within
    the memory budget, total GPUs in [min_workers, max_gpus] (at least one
    GPU; ``max_gpus`` defaults to ``max_workers``), CU capacity covering
    every worker, and normalized waste within the threshold.  Ties on perf
    break toward fewer GPUs, then lexicographically smaller ``nums``.
    ``method="grid"`` switches to the integer-approximation generator; it
    must agree with the exhaustive top-1 and exists as a fast path.
    """
    if max_workers < 1:
        raise ConfigError("max_workers must be >= 1")
    if max_gpus is None:
        max_gpus = max_workers
    if method == "exhaustive":
        grid = None
    elif method == "grid":
        grid = _cu_grid(pool, profile, max_workers)
    else:
        raise ConfigError(f"unknown enumeration method {method!r}")

    per_type = [
        _type_options(
            dtype, profile, max_workers, None if grid is None else grid.get(dtype.name, set())
        )
        for dtype in pool.types
    ]

    lowest_total = max(min_workers, 1)
    best: dict[tuple, PlanConfig] = {}
    for combo in itertools.product(*per_type):
        nums = tuple(c[0] for c in combo)
        total = sum(nums)
        if total < lowest_total or total > max_gpus:
            continue
        if single_type_only and sum(1 for n in nums if n > 0) != 1:
            continue
        mas = []
        mcs = []
        for dtype, (num, m, t) in zip(pool.types, combo):
            if num == 0:
                mas.append(0.0)
                mcs.append(1.0)  # never consulted: the type is unused
                continue
            mc, ma = multi_executor_adjust(
                m, profile.capability[dtype.name], dtype.interference, t
            )
            mas.append(ma)
            mcs.append(mc)
        try:
            capacity, _f, waste, waste_norm, perf = waste_model(
                nums, mas, mcs, max_workers
            )
        except ConstraintError:
            continue
        if waste_norm > waste_threshold * 100.0:
            continue
        cfg = PlanConfig(
            nums=nums,
            executors=tuple(c[1] for c in combo),
            threads=tuple(c[2] for c in combo),
            cu_capacity=int(capacity),
            waste=waste,
            waste_norm=waste_norm,
            perf=perf,
        )
        key = (cfg.nums, cfg.executors, cfg.threads)
        prev = best.get(key)
        if prev is None or cfg.waste < prev.waste:
            best[key] = cfg

    configs = sorted(best.values(), key=lambda c: (-c.perf, c.total_gpus, c.nums))
    return configs


def best_config(
    pool: DevicePool,
    profile: WorkloadProfile,
    min_workers: int,
    max_workers: int,
    **kwargs,
) -> PlanConfig | None:
    configs = enumerate_configs(pool, profile, min_workers, max_workers, **kwargs)
    return configs[0] if configs else None


def propose(
    current: PlanConfig | None,
    pool: DevicePool,
    profile: WorkloadProfile,
    k: int,
    max_workers: int,
    waste_threshold: float = DEFAULT_WASTE_THRESHOLD,
    single_type_only: bool = False,
) -> tuple[PlanConfig | None, list[Proposal]]:
    """Re-plan the current grant and price one-GPU scale-outs.

    Returns the top-1 configuration over the currently granted GPUs plus
    up to ``k`` proposals, each adding exactly one GPU of one type, sorted
    by speedup per GPU (non-positive speedups are dropped).
    """
    granted = {t.name: 0 for t in pool.types}
    if current is not None:
        for dtype, n in zip(pool.types, current.nums):
            granted[dtype.name] = n
    return propose_for_grant(
        granted,
        pool,
        profile,
        k,
        max_workers,
        waste_threshold=waste_threshold,
        single_type_only=single_type_only,
    )


def propose_for_grant(
    granted: Mapping[str, int],
    pool: DevicePool,
    profile: WorkloadProfile,
    k: int,
    max_workers: int,
    waste_threshold: float = DEFAULT_WASTE_THRESHOLD,
    single_type_only: bool = False,
) -> tuple[PlanConfig | None, list[Proposal]]:
    """Same as :func:`propose`, starting from raw per-type grant counts."""
    granted = {t.name: granted.get(t.name, 0) for t in pool.types}
    top1 = None
    if any(granted.values()):
        top1 = best_config(
            pool.restrict(granted),
            profile,
            0,
            max_workers,
            waste_threshold=waste_threshold,
            single_type_only=single_type_only,
        )
    base_perf = top1.perf if top1 is not None else 0.0

    if single_type_only and any(granted.values()):
        candidate_types = [t for t in pool.types if granted[t.name] > 0]
    else:
        candidate_types = list(pool.types)

    proposals = []
    for dtype in candidate_types:
        if granted.get(dtype.name, 0) >= dtype.count:
            continue  # pool exhausted for this type
        candidate = best_config(
            pool.with_extra(dtype.name, granted),
            profile,
            0,
            max_workers,
            waste_threshold=waste_threshold,
            single_type_only=single_type_only,
        )
        if candidate is None:
            continue
        speedup = candidate.perf - base_perf
        if speedup <= 0.0:
            continue
        proposals.append(Proposal(config=candidate, device_type=dtype.name, speedup_per_gpu=speedup))
    proposals.sort(key=lambda p: (-p.speedup_per_gpu, p.device_type))
    return top1, proposals[:k]


def update_profile(
    profile: WorkloadProfile,
    observations: Mapping[str, Sequence[float]],
    alpha: float = 0.5,
) -> WorkloadProfile:
    """Fold observed mini-batch rates into the capability estimates (EMA).

    Types without observations keep their historical values.
    """
    capability = dict(profile.capability)
    for name, values in observations.items():
        if name not in capability:
            raise ConfigError(f"observation for unknown device type {name!r}")
        c = capability[name]
        for v in values:
            c = (1.0 - alpha) * c + alpha * v
        capability[name] = c
    return replace(profile, capability=capability)


def fallback_on_slowdown(
    prev_perf_measured: float, new_perf_measured: float, slack: float = 0.05
) -> FallbackDecision:
    """Revert a reconfiguration whose measured throughput regressed beyond slack."""
    if new_perf_measured < prev_perf_measured * (1.0 - slack):
        return FallbackDecision.REVERT
    return FallbackDecision.KEEP
