"""
Job execution for experiment sweeps.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Any, Callable, Generic, Optional, Sequence, TypeVar

logger = logging.getLogger(__name__)

J = TypeVar("J")


@dataclass
class JobOutcome(Generic[J]):
    index: int
    job: J
    result: Any = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _guarded(func: Callable[[J], Any], index: int, job: J) -> JobOutcome[J]:
    try:
        return JobOutcome(index=index, job=job, result=func(job))
    except Exception as e:
        logger.error(f"Job {index} failed: {type(e).__name__} - {e}")
        return JobOutcome(index=index, job=job, error=f"{type(e).__name__}: {e}")


class JobPool:
    """Runs independent jobs, isolating failures per job.

    ``workers == 1`` or ``sequential`` runs everything in-process in
    submission order. Otherwise jobs go to a process pool; ``func`` must be
    a module-level callable.
    """

    def __init__(self, workers: int = 1, sequential: bool = False):
        self.workers = max(1, int(workers))
        self.sequential = sequential or self.workers == 1

    def map(self, func: Callable[[J], Any], jobs: Sequence[J]) -> list[JobOutcome[J]]:
        if self.sequential:
            return [_guarded(func, i, job) for i, job in enumerate(jobs)]

        outcomes: list[JobOutcome[J]] = []
        with ProcessPoolExecutor(max_workers=self.workers) as pool:
            futures = {pool.submit(_guarded, func, i, job): i for i, job in enumerate(jobs)}
            for future in as_completed(futures):
                i = futures[future]
                try:
                    outcomes.append(future.result())
                except Exception as e:
                    # worker crashed or the result could not be pickled
                    logger.error(f"Job {i} crashed: {e}")
                    outcomes.append(JobOutcome(index=i, job=jobs[i], error=f"{type(e).__name__}: {e}"))
        return sorted(outcomes, key=lambda o: o.index)
