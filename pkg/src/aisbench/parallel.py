"""Deterministic parallel map over independent tasks.

Tasks must be pure given their arguments (all randomness comes from derived
streams), so results are gathered by input order and the output is identical
for any worker count.
"""

import os
from concurrent.futures import ProcessPoolExecutor

WORKERS_ENV = "AISBENCH_WORKERS"


def worker_count() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def parallel_map(fn, items, workers=None):
    """Map fn over items preserving order; serial when one worker suffices."""
    items = list(items)
    if workers is None:
        workers = worker_count()
    workers = min(workers, len(items)) or 1
    if workers == 1:
        return [fn(item) for item in items]
    chunksize = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))
