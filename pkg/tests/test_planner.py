import random

import pytest

from bittrain.errors import ConfigError, ConstraintError
from bittrain.planner import (
    DevicePool,
    DeviceType,
    FallbackDecision,
    WorkloadProfile,
    best_config,
    enumerate_configs,
    fallback_on_slowdown,
    multi_executor_adjust,
    propose,
    propose_for_grant,
    update_profile,
    waste_model,
)
from planner_oracle import oracle_best_perf, oracle_configs


def simple_pool(counts, memory=4.0, interference=None):
    names = ["gpu_a", "gpu_b", "gpu_c"][: len(counts)]
    return DevicePool(
        tuple(
            DeviceType(n, c, memory, dict(interference or {1: 1.0}))
            for n, c in zip(names, counts)
        )
    )


def test_waste_model_balanced_homogeneous():
    # 2 GPUs, capability 1.0, 2 workers each, 4 workers total: zero waste.
    capacity, f, waste, norm, perf = waste_model([2], [2], [1.0], 4)
    assert (capacity, f, waste, norm, perf) == (4.0, 2.0, 0.0, 0.0, 2.0)


def test_waste_model_heterogeneous_balanced():
    capacity, f, waste, norm, perf = waste_model([1, 1], [2, 1], [2.0, 1.0], 3)
    assert capacity == 3.0
    assert f == 1.0
    assert waste == 0.0
    assert perf == 3.0


def test_waste_model_errors():
    with pytest.raises(ConstraintError):
        waste_model([1], [2], [1.0], 4)  # capacity 2 < 4
    with pytest.raises(ConfigError):
        waste_model([0, 0], [1, 1], [1.0, 1.0], 1)
    with pytest.raises(ConfigError):
        waste_model([1], [0], [1.0], 0)


def test_multi_executor_adjust():
    assert multi_executor_adjust(1, 1.7, {1: 1.0}, 3) == (1.7, 3)
    assert multi_executor_adjust(2, 1.0, {1: 1.0, 2: 1.0}, 1) == (2.0, 2)
    mc, ma = multi_executor_adjust(2, 1.0, {1: 1.0, 2: 0.7}, 1)
    assert mc == pytest.approx(1.4)
    assert ma == 2
    with pytest.raises(ConstraintError):
        multi_executor_adjust(3, 1.0, {1: 1.0, 2: 0.7}, 1)
    with pytest.raises(ConfigError):
        multi_executor_adjust(0, 1.0, {1: 1.0}, 1)


def test_enumerate_trivial_pool():
    pool = simple_pool([1])
    profile = WorkloadProfile(mu=1.0, capability={"gpu_a": 1.0})
    configs = enumerate_configs(pool, profile, 0, 1)
    assert len(configs) == 1
    cfg = configs[0]
    assert cfg.nums == (1,) and cfg.executors == (1,) and cfg.threads == (1,)
    assert cfg.waste == 0.0 and cfg.perf == 1.0


def test_enumerate_two_homogeneous_gpus():
    pool = simple_pool([2])
    profile = WorkloadProfile(mu=1.0, capability={"gpu_a": 1.0})
    top = enumerate_configs(pool, profile, 0, 4)[0]
    assert top.nums == (2,)
    assert top.executors[0] * top.threads[0] == 2  # 2 workers per GPU
    assert top.waste == 0.0
    assert top.perf == 2.0


def test_fast_slow_capability_split():
    """The 2.45:1 capability ratio selects the 3-and-1 worker split."""
    pool = simple_pool([1, 1])
    profile = WorkloadProfile(mu=1.0, capability={"gpu_a": 2.45, "gpu_b": 1.0})
    top = enumerate_configs(pool, profile, 0, 4)[0]
    assert top.nums == (1, 1)
    assert (top.executors[0] * top.threads[0], top.executors[1] * top.threads[1]) == (3, 1)
    # Exact evaluation of both candidate splits, straight from the model.
    f31 = 3 / 2.45
    waste31 = (2.45 - 3 / f31) + (1.0 - 1 / f31) + 0.0
    perf31 = (2.45 + 1.0) - waste31
    _, _, w, _, p = waste_model([1, 1], [3, 1], [2.45, 1.0], 4)
    assert (w, p) == (waste31, perf31)
    _, _, w22, _, p22 = waste_model([1, 1], [2, 2], [2.45, 1.0], 4)
    assert p > p22  # (3,1) beats (2,2)


def test_emitted_configs_respect_memory_and_threshold():
    pool = DevicePool(
        (
            DeviceType("gpu_a", 3, memory_mu=2.0, interference={1: 1.0, 2: 0.8}),
            DeviceType("gpu_b", 2, memory_mu=1.0, interference={1: 1.0, 2: 0.9}),
        )
    )
    profile = WorkloadProfile(mu=1.0, capability={"gpu_a": 1.6, "gpu_b": 1.0})
    for cfg in enumerate_configs(pool, profile, 0, 6):
        for dtype, m in zip(pool.types, cfg.executors):
            if m:
                assert m * profile.mu <= dtype.memory_mu
        assert cfg.waste >= 0.0
        assert cfg.waste_norm <= 30.0 + 1e-12
        assert cfg.cu_capacity >= 6
        # waste == 0 exactly when perf equals the aggregate capability.
        total_cap = cfg.perf + cfg.waste
        if cfg.waste == 0.0:
            assert cfg.perf == total_cap


def random_instance(rng, max_types=3, max_count=4, max_workers_cap=16):
    ntypes = rng.randint(1, max_types)
    names = ["gpu_a", "gpu_b", "gpu_c"][:ntypes]
    pool_spec = []
    for n in names:
        count = rng.randint(0, max_count)
        memory = rng.choice([1.0, 2.0, 4.0])
        interference = {1: 1.0}
        if rng.random() < 0.5:
            interference[2] = rng.choice([1.0, 0.9, 0.7, 0.5])
        pool_spec.append((n, count, memory, interference))
    if all(c == 0 for _, c, _, _ in pool_spec):
        name, _c, mem, intf = pool_spec[0]
        pool_spec[0] = (name, 1, mem, intf)
    capability = {n: round(rng.uniform(0.3, 3.0), 3) for n in names}
    mu = rng.choice([0.5, 1.0])
    max_workers = rng.randint(1, max_workers_cap)
    min_workers = 0
    return pool_spec, (mu, capability), min_workers, max_workers


def to_planner_types(pool_spec, profile_spec):
    pool = DevicePool(
        tuple(DeviceType(n, c, mem, dict(intf)) for n, c, mem, intf in pool_spec)
    )
    profile = WorkloadProfile(mu=profile_spec[0], capability=dict(profile_spec[1]))
    return pool, profile


def run_oracle_comparison(cases, sizes):
    rng = random.Random(20240807)
    agree = 0
    for _ in range(cases):
        pool_spec, prof_spec, minw, maxw = random_instance(rng, *sizes)
        pool, profile = to_planner_types(pool_spec, prof_spec)
        top = best_config(pool, profile, minw, maxw)
        expect = oracle_best_perf(pool_spec, prof_spec, minw, maxw)
        if top is None:
            assert expect is None
        else:
            assert expect is not None
            assert top.perf == expect
        agree += 1
    return agree


def test_oracle_equivalence_small_instances():
    assert run_oracle_comparison(120, sizes=(2, 3, 8)) == 120


def test_oracle_equivalence_medium_instances():
    assert run_oracle_comparison(30, sizes=(3, 4, 10)) == 30


def test_grid_fast_path_agrees_with_exhaustive():
    rng = random.Random(77)
    for case in range(70):
        sizes = (3, 4, 12) if case >= 60 else (2, 3, 8)
        pool_spec, prof_spec, minw, maxw = random_instance(rng, *sizes)
        pool, profile = to_planner_types(pool_spec, prof_spec)
        slow = best_config(pool, profile, minw, maxw, method="exhaustive")
        fast = best_config(pool, profile, minw, maxw, method="grid")
        if slow is None:
            assert fast is None
        else:
            assert fast is not None
            assert fast.perf == slow.perf


def test_perf_scales_exactly_with_capability_doubling():
    pool = simple_pool([2, 1])
    profile = WorkloadProfile(mu=1.0, capability={"gpu_a": 1.3, "gpu_b": 0.9})
    doubled = WorkloadProfile(mu=1.0, capability={"gpu_a": 2.6, "gpu_b": 1.8})
    base = enumerate_configs(pool, profile, 0, 5)
    scaled = enumerate_configs(pool, doubled, 0, 5)
    assert [(c.nums, c.executors, c.threads) for c in base] == [
        (c.nums, c.executors, c.threads) for c in scaled
    ]
    for b, s in zip(base, scaled):
        assert s.perf == 2.0 * b.perf


def test_adding_a_gpu_never_hurts():
    rng = random.Random(5)
    for _ in range(40):
        pool_spec, prof_spec, minw, maxw = random_instance(rng, 2, 3, 6)
        pool, profile = to_planner_types(pool_spec, prof_spec)
        top = best_config(pool, profile, minw, maxw)
        if top is None:
            continue
        name = pool.types[0].name
        bigger = DevicePool(
            tuple(
                DeviceType(t.name, t.count + (1 if t.name == name else 0), t.memory_mu, dict(t.interference))
                for t in pool.types
            )
        )
        bigger_top = best_config(bigger, profile, minw, maxw)
        assert bigger_top is not None and bigger_top.perf >= top.perf


def test_propose_exhausted_pool_yields_nothing():
    pool = simple_pool([1])
    profile = WorkloadProfile(mu=1.0, capability={"gpu_a": 1.0})
    top1, proposals = propose_for_grant({"gpu_a": 1}, pool, profile, 3, 2)
    assert top1 is not None
    assert proposals == []


def test_propose_filters_useless_types():
    # gpu_b carries no capability entry: adding it can never help.
    pool = simple_pool([1, 1])
    profile = WorkloadProfile(mu=1.0, capability={"gpu_a": 1.0})
    _top1, proposals = propose_for_grant({"gpu_a": 1}, pool, profile, 3, 4)
    assert all(p.device_type != "gpu_b" for p in proposals)


def test_propose_speedup_matches_oracle_delta():
    pool_spec = [
        ("gpu_a", 1, 4.0, {1: 1.0}),
        ("gpu_b", 1, 4.0, {1: 1.0}),
    ]
    prof_spec = (1.0, {"gpu_a": 2.45, "gpu_b": 1.0})
    pool, profile = to_planner_types(pool_spec, prof_spec)
    top1, proposals = propose_for_grant({"gpu_a": 1}, pool, profile, 3, 4)
    assert top1 is not None
    base = oracle_best_perf([("gpu_a", 1, 4.0, {1: 1.0})], prof_spec, 0, 4)
    grown = oracle_best_perf(pool_spec, prof_spec, 0, 4)
    assert top1.perf == base
    assert len(proposals) == 1 and proposals[0].device_type == "gpu_b"
    assert proposals[0].speedup_per_gpu == grown - base
    assert proposals[0].gpu_delta == 1


def test_propose_full_surface_from_config():
    pool = simple_pool([2])
    profile = WorkloadProfile(mu=1.0, capability={"gpu_a": 1.0})
    current = enumerate_configs(pool.restrict({"gpu_a": 1}), profile, 0, 2)[0]
    top1, proposals = propose(current, pool, profile, 3, 2)
    assert top1 is not None and top1.perf == current.perf
    assert len(proposals) == 1
    assert proposals[0].speedup_per_gpu > 0


def test_update_profile():
    profile = WorkloadProfile(mu=1.0, capability={"gpu_a": 1.0, "gpu_b": 2.0})
    assert update_profile(profile, {}) == profile
    updated = update_profile(profile, {"gpu_a": [3.0]})
    assert updated.capability["gpu_a"] == 2.0  # (1 + 3) / 2
    assert updated.capability["gpu_b"] == 2.0  # unobserved: historical kept
    # Stationary observations converge within 1% after 7 updates.
    p = WorkloadProfile(mu=1.0, capability={"gpu_a": 1.0})
    p = update_profile(p, {"gpu_a": [2.0] * 7})
    assert abs(p.capability["gpu_a"] - 2.0) / 2.0 < 0.01
    with pytest.raises(ConfigError):
        update_profile(profile, {"gpu_z": [1.0]})


def test_fallback_on_slowdown():
    assert fallback_on_slowdown(10.0, 10.0) is FallbackDecision.KEEP
    assert fallback_on_slowdown(10.0, 5.0) is FallbackDecision.REVERT
    assert fallback_on_slowdown(10.0, 9.6) is FallbackDecision.KEEP  # within 5% slack


def test_device_type_validation():
    with pytest.raises(ConfigError):
        DeviceType("x", 1, 1.0, {1: 0.9})  # I(1) must be 1.0
    with pytest.raises(ConfigError):
        DeviceType("x", 1, 1.0, {1: 1.0, 2: 1.1})
    with pytest.raises(ConfigError):
        DeviceType("x", 1, 1.0, {1: 1.0, 2: 0.9, 3: 0.95})  # not non-increasing


def test_oracle_and_planner_agree_on_full_config_sets():
    """Beyond top-1: the feasible sets match on a small instance."""
    pool_spec = [("gpu_a", 2, 2.0, {1: 1.0, 2: 0.8}), ("gpu_b", 1, 1.0, {1: 1.0})]
    prof_spec = (1.0, {"gpu_a": 1.5, "gpu_b": 1.0})
    pool, profile = to_planner_types(pool_spec, prof_spec)
    mine = enumerate_configs(pool, profile, 0, 4)
    oracle = oracle_configs(pool_spec, prof_spec, 0, 4)
    mine_keys = {(c.nums, c.executors, c.threads) for c in mine}
    oracle_keys = {
        (tuple(c[0] for c in chosen), tuple(c[1] for c in chosen), tuple(c[2] for c in chosen))
        for chosen, *_ in oracle
    }
    assert mine_keys == oracle_keys


def test_tie_break_prefers_fewer_gpus_then_lexicographic():
    # Interference-free doubling: <1 GPU x 2 executors> and <2 GPUs x 1>
    # reach the same throughput; the tie goes to the smaller footprint.
    pool = DevicePool(
        (DeviceType("gpu_a", 2, memory_mu=2.0, interference={1: 1.0, 2: 1.0}),)
    )
    profile = WorkloadProfile(mu=1.0, capability={"gpu_a": 1.0})
    configs = enumerate_configs(pool, profile, 0, 2)
    best = configs[0]
    tied = [c for c in configs if c.perf == best.perf]
    assert len(tied) >= 2
    assert best.total_gpus == min(c.total_gpus for c in tied)
    assert best.nums == (1,) and best.executors == (2,) and best.threads == (1,)
