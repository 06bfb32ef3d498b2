"""Inter-job proposal scheduling.

Jobs submit scale-out proposals priced by speedup per GPU; the cluster
scheduler sorts them by (speedup desc, GPU count desc, job id asc) and
greedily approves every proposal the remaining free GPUs can satisfy.
Unsatisfiable proposals are popped and skipped rather than blocking the
scan, so the loop always terminates: it ends when either the resources or
the proposals run out.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping


@dataclass(frozen=True)
class ResourceRequest:
    """One job's proposal as seen by the cluster scheduler."""

    job_id: int
    speedup: float
    demand: Mapping[str, int]  # device type -> GPUs requested

    @property
    def gpu_count(self) -> int:
        return sum(self.demand.values())


def _satisfiable(demand: Mapping[str, int], free: Mapping[str, int]) -> bool:
    return all(free.get(t, 0) >= n for t, n in demand.items())


def schedule(
    requests: list[ResourceRequest],
    available: Mapping[str, int],
    max_grants_per_job: int | None = None,
) -> tuple[list[ResourceRequest], dict[str, int]]:
    """Greedy approval scan; returns (approved requests, remaining GPUs).

    ``max_grants_per_job`` caps approvals per job (the simulator passes 1
    because a job's proposals are alternatives, not a bundle); the default
    places no cap.
    """
    order = sorted(requests, key=lambda r: (-r.speedup, -r.gpu_count, r.job_id))
    free = dict(available)
    approved: list[ResourceRequest] = []
    grants_per_job: dict[int, int] = {}
    for req in order:
        if sum(free.values()) <= 0:
            break
        if max_grants_per_job is not None:
            if grants_per_job.get(req.job_id, 0) >= max_grants_per_job:
                continue
        if not _satisfiable(req.demand, free):
            continue
        for t, n in req.demand.items():
            free[t] = free.get(t, 0) - n
        grants_per_job[req.job_id] = grants_per_job.get(req.job_id, 0) + 1
        approved.append(req)
    return approved, free
