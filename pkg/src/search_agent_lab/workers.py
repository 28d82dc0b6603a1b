from __future__ import annotations

from collections.abc import Callable, Iterable
from typing import TypeVar

from gevent.pool import Pool
from tqdm import tqdm

from .errors import ConfigError

Job = TypeVar("Job")
Result = TypeVar("Result")


class RolloutWorkers:
    """Greenlet pool for per-rollout jobs.

    Results come back in submission order, so the output never depends on
    how the jobs were scheduled. Each job must carry its own seed.
    """

    def __init__(self, size: int = 8, progress: bool = False) -> None:
        if size < 1:
            raise ConfigError("workers", "pool size must be >= 1")
        self._pool: Pool = Pool(size)
        self.progress = progress

    def map(
        self,
        fn: Callable[[Job], Result],
        jobs: Iterable[Job],
        desc: str | None = None,
    ) -> list[Result]:
        jobs = list(jobs)
        results = self._pool.imap(fn, jobs)
        if self.progress:
            results = tqdm(results, total=len(jobs), desc=desc, leave=False)
        return list(results)
