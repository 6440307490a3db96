"""Execution helpers: thread cap and order-stable parallel map."""

import os
from concurrent.futures import ThreadPoolExecutor


def thread_count() -> int:
    """Worker cap from TWV_THREADS (default 1)."""
    raw = os.environ.get("TWV_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"TWV_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def parallel_map(fn, items):
    """Map fn over items, results in input order.

    Trials are independent pure computations, so running them on a thread
    pool cannot change the values; results are collected by index to keep
    output byte-identical for any worker count.
    """
    items = list(items)
    n = thread_count()
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
