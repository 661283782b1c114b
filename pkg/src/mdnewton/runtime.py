"""Shared-memory parallel Newton: a lock-guarded job counter and staged workers."""
from __future__ import annotations

import csv
import os
import threading
import time
from dataclasses import dataclass

import psutil

from .newton import NewtonConfig, NewtonTrace, run_newton
from .polysys import PolySystem


class JobQueue:
    """Jobs 0..job_count-1 handed out by a counter under a mutex."""

    def __init__(self, job_count: int):
        if job_count < 0:
            raise ValueError("job_count must be non-negative")
        self.job_count = job_count
        self._counter = 0
        self._lock = threading.Lock()

    @property
    def counter(self) -> int:
        return self._counter

    def claim_next(self) -> int | None:
        """Index of the next unclaimed job, or None once all are taken."""
        with self._lock:
            i = self._counter
            if i >= self.job_count:
                return None
            self._counter = i + 1
        return i


def claim_next(q: JobQueue) -> int | None:
    return q.claim_next()


class StageError(RuntimeError):
    def __init__(self, job_index: int, stage: int | None = None):
        where = f" in stage {stage}" if stage is not None else ""
        super().__init__(f"job {job_index} failed{where}")
        self.job_index = job_index
        self.stage = stage


@dataclass(frozen=True)
class JobSpan:
    stage: int
    job: int
    start: float
    end: float


def run_stage(jobs, workers: int, timeline: list | None = None, stage: int = 0) -> None:
    """Run callables ``jobs[i]()`` on ``workers`` fresh threads; return after all finish.

    Workers claim indices from one JobQueue.  With one worker the jobs run
    on the calling thread in index order.  The first failing job (lowest
    index among failures) is re-raised as a StageError.
    """
    if workers < 1:
        raise ValueError("workers must be at least 1")
    queue = JobQueue(len(jobs))
    failures = []
    stop = threading.Event()

    def work():
        while not stop.is_set():
            i = queue.claim_next()
            if i is None:
                return
            start = time.perf_counter()
            try:
                jobs[i]()
            except BaseException as exc:  # reported with its index below
                failures.append((i, exc))
                stop.set()
                return
            if timeline is not None:
                timeline.append(JobSpan(stage, i, start, time.perf_counter()))

    if workers == 1:
        work()
    else:
        threads = [threading.Thread(target=work, daemon=True) for _ in range(workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    if failures:
        index, exc = min(failures, key=lambda f: f[0])
        raise StageError(index, stage) from exc


class StageRunner:
    """Callable stage runner for the Newton code, with optional job timeline."""

    def __init__(self, workers: int, record: bool = False):
        if workers < 1:
            raise ValueError("workers must be at least 1")
        self.workers = workers
        self.stages = 0
        self.timeline: list[JobSpan] | None = [] if record else None

    def __call__(self, jobs) -> None:
        stage = self.stages
        self.stages += 1
        run_stage(jobs, self.workers, self.timeline, stage)


def parallel_newton(f: PolySystem, x0, cfg: NewtonConfig, workers: int, runner: StageRunner | None = None) -> NewtonTrace:
    """run_newton with polynomial evaluations and right-hand side updates as jobs."""
    if runner is None:
        runner = StageRunner(workers)
    return run_newton(f, x0, cfg, stage_runner=runner)


def physical_cores() -> int:
    return psutil.cpu_count(logical=False) or os.cpu_count() or 1


def resolve_workers(text: str) -> list[int]:
    """'1,2,4' -> [1, 2, 4]; 'max' means the physical core count."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        w = physical_cores() if part == "max" else int(part)
        if w < 1:
            raise ValueError(f"worker count must be positive, got {w}")
        out.append(w)
    if not out:
        raise ValueError("empty worker list")
    return out


@dataclass(frozen=True)
class BenchResult:
    workers: int
    wall_seconds: float
    speedup: float
    efficiency: float


def measure_efficiency(f: PolySystem, cfg: NewtonConfig, worker_list, x0=None, repeats: int = 3) -> list[BenchResult]:
    """Best-of-``repeats`` wall time of parallel_newton per worker count.

    Speedup and efficiency are relative to the one-worker time, which must
    be in ``worker_list``.  ``x0`` defaults to the all-ones start point.
    """
    worker_list = list(worker_list)
    if not worker_list or 1 not in worker_list:
        raise ValueError("worker_list must be nonempty and contain 1")
    if x0 is None:
        x0 = [1.0] * f.n
    # untimed run so compilation and first-touch costs do not land on the baseline
    parallel_newton(f, x0, cfg, 1)
    walls = {}
    for w in dict.fromkeys(worker_list):
        best = float("inf")
        for _ in range(repeats):
            t0 = time.perf_counter()
            parallel_newton(f, x0, cfg, w)
            best = min(best, time.perf_counter() - t0)
        walls[w] = best
    base = walls[1]
    return [BenchResult(w, walls[w], base / walls[w], base / walls[w] / w) for w in worker_list]


CSV_FIELDS = ["seed", "N", "n", "terms", "degree", "k", "workers", "wall_seconds", "speedup", "efficiency"]


def bench_rows(results, **meta) -> list[dict]:
    rows = []
    for r in results:
        row = {key: meta[key] for key in CSV_FIELDS[:6]}
        row.update(
            workers=r.workers,
            wall_seconds=f"{r.wall_seconds:.6f}",
            speedup=f"{r.speedup:.4f}",
            efficiency=f"{r.efficiency:.4f}",
        )
        rows.append(row)
    return rows


def write_bench_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
