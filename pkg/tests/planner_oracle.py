"""Independent brute-force planning oracle.

A straight nested-loop transcription of the allocation model, written
against plain tuples and kept free of the production planner's types so
the two implementations can disagree.  Used by the planner tests and the
acceptance suite.
"""

from __future__ import annotations

# pool: list of (name, count, memory_mu, {m: interference})
# profile: (mu, {name: capability})


def oracle_configs(pool, profile, min_workers, max_workers, threshold=0.30):
    mu, capability = profile
    per_type = []
    for name, count, memory_mu, interference in pool:
        options = [(0, 0, 0)]
        cap = capability.get(name)
        if cap is not None and count > 0:
            for num in range(1, min(count, max_workers) + 1):
                for m in sorted(interference):
                    if m * mu > memory_mu:
                        continue
                    for t in range(1, max_workers // m + 1):
                        options.append((num, m, t))
        per_type.append(options)

    results = []
    stack = [((), 0)]
    while stack:
        chosen, idx = stack.pop()
        if idx == len(per_type):
            total = sum(c[0] for c in chosen)
            if total < max(min_workers, 1) or total > max_workers:
                continue
            metrics = oracle_evaluate(pool, profile, chosen, max_workers)
            if metrics is None:
                continue
            capacity, waste, waste_norm, perf = metrics
            if waste_norm > threshold * 100.0:
                continue
            results.append((chosen, capacity, waste, waste_norm, perf))
            continue
        for opt in per_type[idx]:
            stack.append((chosen + (opt,), idx + 1))
    return results


def oracle_evaluate(pool, profile, chosen, max_workers):
    """Returns (capacity, waste, waste_norm, perf) or None if infeasible."""
    _mu, capability = profile
    used = [i for i, (num, _m, _t) in enumerate(chosen) if num > 0]
    if not used:
        return None
    mas = {}
    mcs = {}
    for i in used:
        name, _count, _memory, interference = pool[i]
        num, m, t = chosen[i]
        mas[i] = m * t
        mcs[i] = m * capability[name] * interference[m]
    capacity = 0.0
    for i in used:
        capacity += chosen[i][0] * mas[i]
    if capacity < max_workers:
        return None
    f = max(mas[i] / mcs[i] for i in used)
    waste = 0.0
    for i in used:
        waste += mcs[i] - mas[i] / f
    waste += (capacity - max_workers) / f
    if waste < 0.0:  # same zero clamp as the production model
        waste = 0.0
    total_capability = 0.0
    for i in used:
        total_capability += chosen[i][0] * mcs[i]
    waste_norm = waste / total_capability * 100.0
    perf = total_capability - waste
    return capacity, waste, waste_norm, perf


def oracle_best_perf(pool, profile, min_workers, max_workers, threshold=0.30):
    results = oracle_configs(pool, profile, min_workers, max_workers, threshold)
    if not results:
        return None
    return max(r[4] for r in results)
