"""Order-preserving map over worker processes."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Optional


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("MANIFOOL_JOBS", "1")))
    except ValueError:
        return 1


def parallel_map(fn: Callable, items: Iterable, jobs: Optional[int] = 1) -> list:
    """``[fn(x) for x in items]``, optionally spread over ``jobs`` processes.

    Results always come back in input order, and every item is computed
    independently, so the output does not depend on ``jobs``.
    """
    items = list(items)
    jobs = default_jobs() if jobs is None else jobs
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=chunk))
