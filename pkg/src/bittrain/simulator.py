"""Deterministic trace-driven cluster simulation.

A discrete-event loop over job arrivals, scheduling passes, completions,
and preemption traffic.  Three scheduling modes:

* ``yarn``  -- FIFO gang scheduling: a job waits until some single device
  type has max_workers free GPUs, then holds them to completion.
* ``homo``  -- elastic, but every job only ever holds one device type.
* ``heter`` -- elastic across device types; jobs whose determinism mode
  lacks heterogeneity support (no d2) are restricted to one type anyway.

Elastic jobs grow through the proposal mechanism: each pass, every
growable job prices one-extra-GPU configurations and the inter-job
scheduler approves them greedily by speedup (``scheduler.schedule``, one
grant per job per iteration, iterated to a fixed point).  Job progress is
analytic: mini-batches advance at the planner-estimated throughput of the
current configuration.  Reconfigurations cost a fixed pause of lost
progress; a job's first configuration is free.

Preempted GPUs are held outside the pool; the scheduler first waits for
the identical GPUs to come back, and only reconfigures onto the remaining
grant when that wait times out.

Everything -- event order, GPU identity assignment, float arithmetic --
is a pure function of the inputs, so repeated runs produce byte-identical
metrics.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

from .errors import ConfigError
from .planner import DevicePool, PlanConfig, WorkloadProfile, best_config, propose_for_grant
from .scheduler import ResourceRequest, schedule

MODES = ("yarn", "homo", "heter")

# Event priorities at equal timestamps: releases beat restore timeouts so
# GPUs returned exactly at the deadline still count as restored.
_P_RELEASE, _P_TIMEOUT, _P_ARRIVAL, _P_COMPLETE, _P_PREEMPT, _P_ROUND = range(6)

_MAX_SIM_TIME = 1e7  # safety net against unfinishable traces


@dataclass(frozen=True)
class TraceJob:
    job_id: int
    arrival_s: float
    min_workers: int
    max_workers: int
    total_minibatches: int
    workload_key: str
    determinism: str = "d1d2"

    def __post_init__(self):
        if not (0 <= self.min_workers <= self.max_workers):
            raise ConfigError(f"job {self.job_id}: need 0 <= minP <= maxP")
        if self.total_minibatches < 1:
            raise ConfigError(f"job {self.job_id}: total_minibatches must be >= 1")
        if self.determinism not in ("d0", "d1", "d1d2", "d0d2"):
            raise ConfigError(
                f"job {self.job_id}: unknown determinism mode {self.determinism!r}"
            )


@dataclass(frozen=True)
class PreemptionDirective:
    """Revoke ``gpu_count`` GPUs from a job at ``time_s``; the GPUs come back
    to the cluster ``hold_s`` later (None: never)."""

    time_s: float
    job_id: int
    gpu_count: int
    hold_s: float | None = None


@dataclass
class JobRecord:
    job_id: int
    arrival_s: float
    completion_s: float | None
    jct_s: float | None
    rejected: bool = False
    reason: str = ""


@dataclass
class SimMetrics:
    mode: str
    jobs: list[JobRecord]
    makespan: float
    mean_jct: float
    preemption_count: int
    timeline: list[tuple[float, int]]

    @property
    def completed(self) -> list[JobRecord]:
        return [j for j in self.jobs if j.completion_s is not None]


@dataclass
class _Job:
    spec: TraceJob
    grant: dict[str, list[str]] = field(default_factory=dict)
    config: PlanConfig | None = None
    rate: float = 0.0
    done_mb: float = 0.0
    last_update: float = 0.0
    pause_until: float = 0.0
    completed_at: float | None = None
    rejected: str | None = None
    admitted: bool = False
    ever_configured: bool = False
    pending_restore: tuple[tuple[str, ...], float] | None = None
    gen: int = 0
    suspensions: int = 0

    @property
    def gpu_total(self) -> int:
        return sum(len(ids) for ids in self.grant.values())

    def grant_counts(self) -> dict[str, int]:
        return {t: len(ids) for t, ids in self.grant.items() if ids}

    @property
    def finished(self) -> bool:
        return self.completed_at is not None or self.rejected is not None


class ClusterSim:
    """One simulation run; construct fresh per (trace, pool, mode)."""

    def __init__(
        self,
        pool: DevicePool,
        workloads: dict[str, WorkloadProfile],
        mode: str,
        round_period: float = 30.0,
        restore_timeout: float = 300.0,
        reconfig_cost: float = 10.0,
        proposal_k: int = 3,
        waste_threshold: float = 0.30,
    ):
        if mode not in MODES:
            raise ConfigError(f"unknown scheduling mode {mode!r}")
        self.pool = pool
        self.workloads = workloads
        self.mode = mode
        self.round_period = round_period
        self.restore_timeout = restore_timeout
        self.reconfig_cost = reconfig_cost
        self.proposal_k = proposal_k
        self.waste_threshold = waste_threshold

        self.free: dict[str, list[str]] = {
            t.name: [f"{t.name}-{i}" for i in range(t.count)] for t in pool.types
        }
        self.jobs: dict[int, _Job] = {}
        self.fifo: list[int] = []  # arrival order of admitted-or-waiting jobs
        self._events: list[tuple[float, int, int, str, tuple]] = []
        self._seq = itertools.count()
        self.now = 0.0
        self.preemption_count = 0
        self.timeline: list[tuple[float, int]] = []

    # -- event plumbing ----------------------------------------------------

    def _push(self, time: float, priority: int, kind: str, payload: tuple = ()):
        heapq.heappush(self._events, (time, priority, next(self._seq), kind, payload))

    def _alloc(self, type_name: str, n: int) -> list[str]:
        ids = self.free[type_name][:n]
        del self.free[type_name][:n]
        return ids

    def _free_ids(self, ids: dict[str, list[str]]):
        for t, lst in ids.items():
            self.free[t].extend(lst)
            self.free[t].sort()

    # -- job progress ------------------------------------------------------

    def _advance(self, job: _Job):
        busy_from = max(job.last_update, min(job.pause_until, self.now))
        if self.now > busy_from and job.rate > 0.0:
            job.done_mb += job.rate * (self.now - busy_from)
        job.last_update = self.now

    def _set_rate(self, job: _Job, rate: float, pause: bool):
        self._advance(job)
        job.rate = rate
        if pause:
            job.pause_until = self.now + self.reconfig_cost
        job.gen += 1
        if job.rate > 0.0 and not job.finished:
            remaining = job.spec.total_minibatches - job.done_mb
            if remaining <= 0.0:
                remaining = 0.0
            start = max(self.now, job.pause_until)
            self._push(start + remaining / job.rate, _P_COMPLETE, "complete",
                       (job.spec.job_id, job.gen))

    # -- per-job planning --------------------------------------------------

    def _profile(self, job: _Job) -> WorkloadProfile:
        return self.workloads[job.spec.workload_key]

    def _single_type(self, job: _Job) -> bool:
        return self.mode == "homo" or "d2" not in job.spec.determinism

    def _compatible_types(self, job: _Job) -> list[str]:
        prof = self.workloads.get(job.spec.workload_key)
        if prof is None:
            return []
        return [t.name for t in self.pool.types if t.name in prof.capability]

    def _replan(self, job: _Job):
        """Recompute the job's best configuration over its current grant."""
        counts = job.grant_counts()
        if not counts:
            job.config = None
            self._set_rate(job, 0.0, pause=False)
            return
        cfg = best_config(
            self.pool.restrict(counts),
            self._profile(job),
            0,
            job.spec.max_workers,
            waste_threshold=self.waste_threshold,
            single_type_only=self._single_type(job),
        )
        job.config = cfg
        pause = job.ever_configured
        job.ever_configured = True
        self._set_rate(job, cfg.perf if cfg else 0.0, pause=pause)

    # -- scheduling passes ---------------------------------------------------

    def _free_counts(self) -> dict[str, int]:
        return {t: len(ids) for t, ids in self.free.items()}

    def _pass_yarn(self):
        for job_id in self.fifo:
            job = self.jobs[job_id]
            if job.finished or job.gpu_total > 0:
                continue
            placed = False
            for t in self.pool.types:
                prof = self.workloads[job.spec.workload_key]
                if t.name not in prof.capability:
                    continue
                if len(self.free[t.name]) >= job.spec.max_workers:
                    ids = self._alloc(t.name, job.spec.max_workers)
                    job.grant[t.name] = ids
                    rate = job.spec.max_workers * prof.capability[t.name]
                    job.ever_configured = True
                    self._set_rate(job, rate, pause=False)
                    placed = True
                    break
            if not placed:
                return  # strict FIFO: the head blocks everyone behind it

    def _pass_elastic(self):
        # Grants accumulate over the fixed-point loop; each changed job is
        # re-planned once at the end (one reconfiguration per pass).
        dirty: set[int] = set()
        while True:
            grew = False
            # Admission bundles first (FIFO): jobs with a guaranteed minimum
            # start at exactly min_workers GPUs.
            for job_id in self.fifo:
                job = self.jobs[job_id]
                if (job.finished or job.admitted or job.pending_restore
                        or job.spec.min_workers == 0):
                    continue
                bundle = best_config(
                    self.pool.restrict(self._free_counts()),
                    self._profile(job),
                    job.spec.min_workers,
                    job.spec.max_workers,
                    waste_threshold=self.waste_threshold,
                    single_type_only=self._single_type(job),
                    max_gpus=job.spec.min_workers,
                )
                if bundle is None:
                    continue
                for dtype, n in zip(self.pool.types, bundle.nums):
                    if n:
                        job.grant.setdefault(dtype.name, []).extend(self._alloc(dtype.name, n))
                job.admitted = True
                dirty.add(job_id)
                grew = True

            requests = []
            for job_id in self.fifo:
                job = self.jobs[job_id]
                if job.finished or job.pending_restore:
                    continue
                if not job.admitted:
                    continue
                if job.gpu_total >= job.spec.max_workers:
                    continue
                _top1, proposals = propose_for_grant(
                    job.grant_counts(),
                    self.pool,
                    self._profile(job),
                    self.proposal_k,
                    job.spec.max_workers,
                    waste_threshold=self.waste_threshold,
                    single_type_only=self._single_type(job),
                )
                for p in proposals:
                    requests.append(
                        ResourceRequest(job_id, p.speedup_per_gpu, {p.device_type: 1})
                    )
            approved, _left = schedule(requests, self._free_counts(), max_grants_per_job=1)
            for req in approved:
                job = self.jobs[req.job_id]
                for t, n in req.demand.items():
                    job.grant.setdefault(t, []).extend(self._alloc(t, n))
                dirty.add(req.job_id)
                grew = True
            if not grew:
                break
        for job_id in sorted(dirty):
            self._replan(self.jobs[job_id])

    def _run_pass(self):
        if self.mode == "yarn":
            self._pass_yarn()
        else:
            self._pass_elastic()
        total = sum(j.gpu_total for j in self.jobs.values() if not j.finished)
        if self.timeline and self.timeline[-1][0] == self.now:
            self.timeline[-1] = (self.now, total)
        else:
            self.timeline.append((self.now, total))

    # -- event handlers ------------------------------------------------------

    def _on_arrival(self, job_id: int):
        job = self.jobs[job_id]
        compatible = self._compatible_types(job)
        if not compatible:
            job.rejected = "workload has no capability on any pool device type"
            return
        if self.mode == "yarn":
            biggest = max(self.pool.types[self.pool.index_of(t)].count for t in compatible)
            if job.spec.max_workers > biggest:
                job.rejected = (
                    f"gang of {job.spec.max_workers} same-type GPUs exceeds the pool"
                )
                return
        else:
            total = sum(self.pool.types[self.pool.index_of(t)].count for t in compatible)
            if job.spec.min_workers > total:
                job.rejected = "guaranteed minimum exceeds the pool"
                return
            if job.spec.min_workers == 0:
                job.admitted = True
        self.fifo.append(job_id)

    def _on_complete(self, job_id: int, gen: int):
        job = self.jobs[job_id]
        if job.finished or job.gen != gen:
            return
        self._advance(job)
        job.done_mb = float(job.spec.total_minibatches)
        job.completed_at = self.now
        job.rate = 0.0
        job.gen += 1
        self._free_ids(job.grant)
        job.grant = {}

    def _on_preempt(self, job_id: int, count: int, hold_s: float | None):
        job = self.jobs[job_id]
        if job.finished:
            return
        held = sorted(gid for ids in job.grant.values() for gid in ids)[-count:]
        if not held:
            return
        for t in list(job.grant):
            job.grant[t] = [g for g in job.grant[t] if g not in held]
            if not job.grant[t]:
                del job.grant[t]
        self.preemption_count += 1
        if job.gpu_total < max(job.spec.min_workers, 1):
            job.suspensions += 1
        # Stall on the remaining grant while waiting for the same GPUs back.
        self._set_rate(job, 0.0, pause=False)
        deadline = self.now + self.restore_timeout
        job.pending_restore = (tuple(held), deadline)
        self._push(deadline, _P_TIMEOUT, "restore_timeout", (job_id,))
        if hold_s is not None:
            self._push(self.now + hold_s, _P_RELEASE, "release", (job_id, tuple(held)))

    def _on_release(self, job_id: int, ids: tuple[str, ...]):
        job = self.jobs[job_id]
        pending = job.pending_restore
        if (not job.finished and pending is not None and pending[0] == ids
                and self.now <= pending[1]):
            # Identical GPUs back in time: resume the old configuration as-is.
            job.pending_restore = None
            for gid in ids:
                t = gid.rsplit("-", 1)[0]
                job.grant.setdefault(t, []).append(gid)
                job.grant[t].sort()
            self._set_rate(job, job.config.perf if job.config else 0.0, pause=False)
        else:
            by_type: dict[str, list[str]] = {}
            for gid in ids:
                by_type.setdefault(gid.rsplit("-", 1)[0], []).append(gid)
            self._free_ids(by_type)

    def _on_restore_timeout(self, job_id: int):
        job = self.jobs[job_id]
        if job.finished or job.pending_restore is None:
            return
        if self.now < job.pending_restore[1]:
            return  # superseded deadline
        job.pending_restore = None
        self._replan(job)  # fall back to the GPUs it currently owns

    # -- main loop -----------------------------------------------------------

    def run(
        self,
        trace: list[TraceJob],
        preemptions: tuple[PreemptionDirective, ...] = (),
    ) -> SimMetrics:
        if not trace:
            raise ConfigError("empty trace")
        if not self.pool.types:
            raise ConfigError("empty device pool")
        for spec in sorted(trace, key=lambda j: (j.arrival_s, j.job_id)):
            if spec.job_id in self.jobs:
                raise ConfigError(f"duplicate job id {spec.job_id}")
            self.jobs[spec.job_id] = _Job(spec=spec, last_update=spec.arrival_s)
            self._push(spec.arrival_s, _P_ARRIVAL, "arrival", (spec.job_id,))
        for d in preemptions:
            self._push(d.time_s, _P_PREEMPT, "preempt", (d.job_id, d.gpu_count, d.hold_s))
        self._push(0.0, _P_ROUND, "round", ())

        while self._events:
            time = self._events[0][0]
            if time > _MAX_SIM_TIME:
                raise RuntimeError("simulation exceeded the time safety bound")
            self.now = time
            while self._events and self._events[0][0] == time:
                _, _, _, kind, payload = heapq.heappop(self._events)
                if kind == "arrival":
                    self._on_arrival(*payload)
                elif kind == "complete":
                    self._on_complete(*payload)
                elif kind == "preempt":
                    self._on_preempt(*payload)
                elif kind == "release":
                    self._on_release(*payload)
                elif kind == "restore_timeout":
                    self._on_restore_timeout(*payload)
                elif kind == "round":
                    if any(not j.finished for j in self.jobs.values()):
                        self._push(time + self.round_period, _P_ROUND, "round", ())
            self._run_pass()

        records = []
        for job_id in sorted(self.jobs):
            job = self.jobs[job_id]
            jct = None
            if job.completed_at is not None:
                jct = job.completed_at - job.spec.arrival_s
            records.append(
                JobRecord(
                    job_id=job_id,
                    arrival_s=job.spec.arrival_s,
                    completion_s=job.completed_at,
                    jct_s=jct,
                    rejected=job.rejected is not None,
                    reason=job.rejected or "",
                )
            )
        completed = [r for r in records if r.jct_s is not None]
        mean_jct = sum(r.jct_s for r in completed) / len(completed) if completed else 0.0
        makespan = max((r.completion_s for r in completed), default=0.0)
        return SimMetrics(
            mode=self.mode,
            jobs=records,
            makespan=makespan,
            mean_jct=mean_jct,
            preemption_count=self.preemption_count,
            timeline=self.timeline,
        )


def simulate(
    trace: list[TraceJob],
    pool: DevicePool,
    workloads: dict[str, WorkloadProfile],
    mode: str,
    preemptions: tuple[PreemptionDirective, ...] = (),
    **knobs,
) -> SimMetrics:
    """Run one deterministic simulation; a pure function of its arguments."""
    return ClusterSim(pool, workloads, mode, **knobs).run(trace, preemptions)
