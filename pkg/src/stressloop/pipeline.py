"""Discrete-event queueing model of the sensing-data processing pipeline.

Jobs arrive as the superposition of per-user Poisson submissions (one window
per 15 simulated minutes on average), pass a fast single-server web stage,
then fan out to a processing worker pool and, in parallel, a storage worker
pool. Storage workers optionally defer to processing work: they only start a
write while no processing job is waiting. End-to-end latency is submission to
analysis-result availability, so storage stays off the critical path.

The claim the sweep tests is the curve's shape (flat, then a knee, then
saturation), not absolute service times.
"""

from __future__ import annotations

import csv
import heapq
from collections import deque
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PipelineConfig",
    "LatencyReport",
    "SweepResult",
    "simulate",
    "latency_sweep",
    "write_sweep_csv",
]

ARRIVAL, WEB_DONE, PROC_DONE, STORE_DONE = 0, 1, 2, 3

SERVICE_DISTRIBUTIONS = ("exponential", "deterministic")


@dataclass(frozen=True)
class PipelineConfig:
    n_users: int
    submission_interval_s: float = 900.0  # one window per user per 15 minutes
    webserver_service_ms: float = 5.0
    processing_service_ms: float = 3400.0
    storage_service_ms: float = 800.0
    n_processing_workers: int = 2
    n_storage_workers: int = 1
    storage_priority_lower: bool = True
    sim_duration_s: float = 200_000.0
    service_distribution: str = "exponential"
    warmup_fraction: float = 0.1

    def __post_init__(self):
        if self.n_users < 1:
            raise ValueError("n_users must be >= 1")
        if min(self.webserver_service_ms, self.processing_service_ms,
               self.storage_service_ms) <= 0:
            raise ValueError("service times must be positive")
        if min(self.n_processing_workers, self.n_storage_workers) < 1:
            raise ValueError("worker counts must be >= 1")
        if self.service_distribution not in SERVICE_DISTRIBUTIONS:
            raise ValueError(f"service_distribution must be one of {SERVICE_DISTRIBUTIONS}")

    @property
    def arrival_rate(self) -> float:
        return self.n_users / self.submission_interval_s

    def utilization(self) -> dict:
        lam = self.arrival_rate
        return {
            "webserver": lam * self.webserver_service_ms / 1000.0,
            "processing": lam * self.processing_service_ms / 1000.0 / self.n_processing_workers,
            "storage": lam * self.storage_service_ms / 1000.0 / self.n_storage_workers,
        }


@dataclass(frozen=True)
class LatencyReport:
    n_users: int
    arrivals: int
    departures: int
    in_system_at_end: int
    webserver_wait_ms: float
    webserver_service_ms: float
    processing_queue_wait_ms: float
    processing_service_ms: float
    storage_queue_wait_ms: float
    end_to_end_ms: float
    p95_processing_queue_wait_ms: float
    p95_end_to_end_ms: float
    utilization: dict
    saturated: bool


class _Job:
    __slots__ = ("arrival", "web_start", "web_done", "proc_start", "proc_done",
                 "store_start", "store_done")

    def __init__(self, arrival: float):
        self.arrival = arrival
        self.web_start = self.web_done = None
        self.proc_start = self.proc_done = None
        self.store_start = self.store_done = None


def simulate(cfg: PipelineConfig, seed: int = 0) -> LatencyReport:
    """Run one simulation; deterministic given seed (ties break by event id).

    Overload is allowed: utilization >= 1 at any stage sets the saturated
    flag instead of failing, and queues simply grow.
    """
    rng = np.random.default_rng(seed)
    exponential = cfg.service_distribution == "exponential"

    def service(mean_ms: float) -> float:
        mean_s = mean_ms / 1000.0
        return rng.exponential(mean_s) if exponential else mean_s

    heap: list = []
    seq = 0

    def push(time: float, kind: int, job) -> None:
        nonlocal seq
        heapq.heappush(heap, (time, seq, kind, job))
        seq += 1

    web_queue: deque = deque()
    web_busy = False
    proc_queue: deque = deque()
    proc_free = cfg.n_processing_workers
    store_queue: deque = deque()
    store_free = cfg.n_storage_workers

    jobs: list[_Job] = []
    arrival_gap = 1.0 / cfg.arrival_rate
    push(rng.exponential(arrival_gap), ARRIVAL, None)

    now = 0.0
    while heap:
        time, _, kind, job = heapq.heappop(heap)
        if time > cfg.sim_duration_s:
            break
        now = time

        if kind == ARRIVAL:
            new_job = _Job(now)
            jobs.append(new_job)
            web_queue.append(new_job)
            push(now + rng.exponential(arrival_gap), ARRIVAL, None)
        elif kind == WEB_DONE:
            job.web_done = now
            web_busy = False
            proc_queue.append(job)
            store_queue.append(job)
        elif kind == PROC_DONE:
            job.proc_done = now
            proc_free += 1
        elif kind == STORE_DONE:
            job.store_done = now
            store_free += 1

        # dispatch: webserver, then processing, then storage (which defers to
        # queued processing work when configured as lower priority)
        if not web_busy and web_queue:
            nxt = web_queue.popleft()
            nxt.web_start = now
            web_busy = True
            push(now + service(cfg.webserver_service_ms), WEB_DONE, nxt)
        while proc_free and proc_queue:
            nxt = proc_queue.popleft()
            nxt.proc_start = now
            proc_free -= 1
            push(now + service(cfg.processing_service_ms), PROC_DONE, nxt)
        while store_free and store_queue and not (cfg.storage_priority_lower and proc_queue):
            nxt = store_queue.popleft()
            nxt.store_start = now
            store_free -= 1
            push(now + service(cfg.storage_service_ms), STORE_DONE, nxt)

    departures = sum(1 for j in jobs if j.proc_done is not None and j.store_done is not None)
    warmup = cfg.warmup_fraction * cfg.sim_duration_s
    measured = [j for j in jobs if j.arrival >= warmup and j.proc_done is not None]

    def ms(values) -> float:
        return float(np.mean(values) * 1000.0) if values else 0.0

    web_waits = [j.web_start - j.arrival for j in measured]
    web_services = [j.web_done - j.web_start for j in measured]
    proc_waits = [j.proc_start - j.web_done for j in measured]
    proc_services = [j.proc_done - j.proc_start for j in measured]
    end_to_end = [j.proc_done - j.arrival for j in measured]
    store_waits = [
        j.store_start - j.web_done
        for j in jobs
        if j.arrival >= warmup and j.store_start is not None
    ]

    utilization = cfg.utilization()
    return LatencyReport(
        n_users=cfg.n_users,
        arrivals=len(jobs),
        departures=departures,
        in_system_at_end=len(jobs) - departures,
        webserver_wait_ms=ms(web_waits),
        webserver_service_ms=ms(web_services),
        processing_queue_wait_ms=ms(proc_waits),
        processing_service_ms=ms(proc_services),
        storage_queue_wait_ms=ms(store_waits),
        end_to_end_ms=ms(end_to_end),
        p95_processing_queue_wait_ms=(
            float(np.percentile(proc_waits, 95) * 1000.0) if proc_waits else 0.0
        ),
        p95_end_to_end_ms=float(np.percentile(end_to_end, 95) * 1000.0) if end_to_end else 0.0,
        utilization=utilization,
        saturated=max(utilization.values()) >= 1.0,
    )


@dataclass(frozen=True)
class SweepResult:
    reports: tuple
    knee_users: int | None  # first count whose queue wait exceeds service time


def latency_sweep(cfg: PipelineConfig, user_counts, seed: int = 0) -> SweepResult:
    """One report per user count (counts must ascend), sharing the seed so
    consecutive counts are paired comparisons."""
    counts = [int(c) for c in user_counts]
    if counts != sorted(counts):
        raise ValueError("user_counts must be sorted ascending")
    reports = []
    knee = None
    for c in counts:
        report = simulate(
            PipelineConfig(
                n_users=c,
                submission_interval_s=cfg.submission_interval_s,
                webserver_service_ms=cfg.webserver_service_ms,
                processing_service_ms=cfg.processing_service_ms,
                storage_service_ms=cfg.storage_service_ms,
                n_processing_workers=cfg.n_processing_workers,
                n_storage_workers=cfg.n_storage_workers,
                storage_priority_lower=cfg.storage_priority_lower,
                sim_duration_s=cfg.sim_duration_s,
                service_distribution=cfg.service_distribution,
                warmup_fraction=cfg.warmup_fraction,
            ),
            seed=seed,
        )
        reports.append(report)
        if knee is None and report.processing_queue_wait_ms > cfg.processing_service_ms:
            knee = c
    return SweepResult(reports=tuple(reports), knee_users=knee)


SWEEP_CSV_COLUMNS = (
    "users",
    "webserver_ms",
    "proc_queue_ms",
    "proc_ms",
    "storage_queue_ms",
    "end_to_end_ms",
    "saturated",
)


def write_sweep_csv(result: SweepResult, path, preamble: str | None = None) -> None:
    with open(path, "w", newline="") as f:
        if preamble:
            f.write(f"# {preamble}\n")
        writer = csv.writer(f)
        writer.writerow(SWEEP_CSV_COLUMNS)
        for r in result.reports:
            writer.writerow(
                [
                    r.n_users,
                    repr(r.webserver_wait_ms + r.webserver_service_ms),
                    repr(r.processing_queue_wait_ms),
                    repr(r.processing_service_ms),
                    repr(r.storage_queue_wait_ms),
                    repr(r.end_to_end_ms),
                    int(r.saturated),
                ]
            )
