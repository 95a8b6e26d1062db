"""Per-node multithreaded execution of reality paths.

Each job owns a backlog deque: it pops and pushes successors at the head
(depth-first), while load balancing and outgoing work steal from the tail.
A single pool-wide condition guards every backlog and busy flag, so idle
detection always reads a consistent snapshot.
"""

from __future__ import annotations

import logging
import os
import random
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .metrics import TraversalMetrics, sum_metrics
from .model import Network, Scenario
from .traversal import FINAL, ActionLog, RealityPath, expand_path, root_path

log = logging.getLogger(__name__)

JOBS_ENV = "TWINPATH_JOBS"

__all__ = [
    "CancellationToken",
    "Jitter",
    "Job",
    "JobPool",
    "PoolConfig",
    "TraversalMetrics",
    "all_idle",
    "default_job_count",
    "drain_completed",
    "job_loop",
    "load_balance_tick",
    "run_pool",
    "take_half",
]


def default_job_count() -> int:
    env = os.environ.get(JOBS_ENV)
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"{JOBS_ENV} must be >= 1")
        return n
    return max(1, (os.cpu_count() or 1) - 1)


class CancellationToken:
    """Write-once flag; once set it never clears."""

    def __init__(self) -> None:
        self._event = threading.Event()

    def set(self) -> None:
        self._event.set()

    def is_set(self) -> bool:
        return self._event.is_set()

    def wait(self, timeout: float | None = None) -> bool:
        return self._event.wait(timeout)


class Jitter:
    """Seeded random delays injected at scheduling points (test instrumentation)."""

    def __init__(self, seed: int, max_delay: float = 0.05, probability: float = 0.1) -> None:
        self._rng = random.Random(seed)
        self._lock = threading.Lock()
        self.max_delay = max_delay
        self.probability = probability
        self.injected = 0

    def __call__(self) -> None:
        with self._lock:
            if self._rng.random() >= self.probability:
                return
            delay = self._rng.uniform(0, self.max_delay)
            self.injected += 1
        time.sleep(delay)


@dataclass
class PoolConfig:
    job_count: int = field(default_factory=default_job_count)
    action_mode: str = "dry_run"

    def __post_init__(self) -> None:
        if self.job_count < 1:
            raise ValueError("job_count must be >= 1")


class Job:
    __slots__ = ("index", "backlog", "completed", "busy", "metrics", "cond")

    def __init__(self, index: int, cond: threading.Condition) -> None:
        self.index = index
        self.backlog: deque[RealityPath] = deque()
        self.completed: deque[RealityPath] = deque()
        self.busy = False
        self.metrics = TraversalMetrics()
        self.cond = cond

    @property
    def idle(self) -> bool:
        return not self.busy and not self.backlog

    def __repr__(self) -> str:
        return f"Job({self.index}, backlog={len(self.backlog)}, completed={len(self.completed)}, busy={self.busy})"


def job_loop(
    job: Job,
    net: Network,
    scenario: Scenario,
    token: CancellationToken,
    *,
    actions: ActionLog | None = None,
    deadline: float | None = None,
    jitter: Callable[[], None] | None = None,
    idle_wait: float = 0.01,
) -> None:
    """Process ``job``'s backlog until ``token`` is set."""
    cond = job.cond
    while not token.is_set():
        with cond:
            if not job.backlog:
                cond.wait(idle_wait)
                continue
            path = job.backlog.popleft()
            job.busy = True
        if jitter is not None:
            jitter()
        try:
            successors = expand_path(path, net, scenario, job.metrics, actions, deadline)
        except Exception:  # contain per-path failures
            log.exception("expansion failed for %r", path)
            job.metrics.expansion_failures += 1
            successors = []
        with cond:
            active = [s for s in successors if s.status != FINAL]
            job.backlog.extendleft(reversed(active))
            job.completed.extend(s for s in successors if s.status == FINAL)
            job.busy = False
            cond.notify_all()


def take_half(job: Job) -> list[RealityPath]:
    """Remove floor(n/2) paths from the backlog tail; the donor keeps the rest."""
    with job.cond:
        n = len(job.backlog) // 2
        taken = [job.backlog.pop() for _ in range(n)]
    taken.reverse()
    return taken


def load_balance_tick(jobs: Sequence[Job], token: CancellationToken, start: int = 0) -> int:
    """Give half of job 0's backlog to one idle job; returns the number moved.

    Idle candidates are scanned cyclically from ``start`` (an index into
    ``jobs[1:]``) so repeated ticks rotate among them.
    """
    if token.is_set() or len(jobs) < 2:
        return 0
    with jobs[0].cond:
        donor = jobs[0]
        if len(donor.backlog) < 2:
            return 0
        others = jobs[1:]
        for k in range(len(others)):
            target = others[(start + k) % len(others)]
            if target.idle:
                moved = take_half(donor)
                target.backlog.extend(moved)
                donor.cond.notify_all()
                return len(moved)
    return 0


def all_idle(jobs: Sequence[Job]) -> bool:
    if not jobs:
        return True
    with jobs[0].cond:
        return all(j.idle for j in jobs)


def drain_completed(jobs: Sequence[Job], max_items: int) -> list[RealityPath]:
    """Remove up to ``max_items`` final paths, round-robin across jobs."""
    if max_items < 1:
        raise ValueError("max_items must be >= 1")
    out: list[RealityPath] = []
    if not jobs:
        return out
    with jobs[0].cond:
        while len(out) < max_items:
            progressed = False
            for j in jobs:
                if j.completed and len(out) < max_items:
                    out.append(j.completed.popleft())
                    progressed = True
            if not progressed:
                break
    return out


class JobPool:
    """A node's jobs, their threads and the shared cancellation token."""

    def __init__(
        self,
        net: Network,
        scenario: Scenario,
        job_count: int | None = None,
        *,
        actions: ActionLog | None = None,
        jitter: Callable[[], None] | None = None,
    ) -> None:
        self.net = net
        self.scenario = scenario
        self.cond = threading.Condition()
        self.jobs = [Job(i, self.cond) for i in range(job_count or default_job_count())]
        self.token = CancellationToken()
        self.actions = actions
        self.jitter = jitter
        self.deadline: float | None = None
        self._threads: list[threading.Thread] = []
        self._cursor = 0

    def start(self) -> None:
        if self.scenario.time_limit is not None:
            self.deadline = time.monotonic() + float(self.scenario.time_limit)
        for job in self.jobs:
            t = threading.Thread(
                target=job_loop,
                args=(job, self.net, self.scenario, self.token),
                kwargs={"actions": self.actions, "deadline": self.deadline, "jitter": self.jitter},
                name=f"job-{job.index}",
                daemon=True,
            )
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self.token.set()
        with self.cond:
            self.cond.notify_all()
        for t in self._threads:
            t.join()
        self._threads.clear()

    def add_work(self, paths: Iterable[RealityPath]) -> int:
        """Queue incoming paths on job 0 for the balancer to spread."""
        paths = list(paths)
        with self.cond:
            self.jobs[0].backlog.extend(paths)
            self.cond.notify_all()
        return len(paths)

    def take_half_each(self) -> list[RealityPath]:
        """Half of every job's backlog, for an outgoing work buffer."""
        with self.cond:
            out: list[RealityPath] = []
            for job in self.jobs:
                out.extend(take_half(job))
            return out

    def balance_tick(self) -> int:
        moved = load_balance_tick(self.jobs, self.token, self._cursor)
        if moved:
            self._cursor += 1
        return moved

    def all_idle(self) -> bool:
        return all_idle(self.jobs)

    def drain_completed(self, max_items: int = 1 << 30) -> list[RealityPath]:
        return drain_completed(self.jobs, max_items)

    def backlog_size(self) -> int:
        with self.cond:
            return sum(len(j.backlog) for j in self.jobs)

    def busy_count(self) -> int:
        with self.cond:
            return sum(1 for j in self.jobs if j.busy)

    def metrics(self) -> TraversalMetrics:
        return sum_metrics(j.metrics for j in self.jobs)


def run_pool(
    net: Network,
    scenario: Scenario,
    sink: Callable[[RealityPath], object],
    *,
    job_count: int | None = None,
    actions: ActionLog | None = None,
    poll: float = 0.002,
) -> TraversalMetrics:
    """Single-node run: seed the root, balance until every job is idle, deliver finals."""
    pool = JobPool(net, scenario, job_count, actions=actions)
    root = root_path(net, scenario)
    if root.status == FINAL:
        sink(root)
        m = TraversalMetrics()
        m.final_paths = 1
        return m
    pool.add_work([root])
    pool.start()
    try:
        while True:
            for p in pool.drain_completed(4096):
                sink(p)
            pool.balance_tick()
            if pool.all_idle():
                break
            time.sleep(poll)
    finally:
        pool.stop()
    for p in pool.drain_completed():
        sink(p)
    return pool.metrics()
