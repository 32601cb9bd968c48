"""Deterministic parallel map over independent work items.

Results are collected in input order regardless of completion order, and
every item carries its own seed, so runs are byte-reproducible at any
thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

__all__ = ["resolve_threads", "det_map"]

ENV_THREADS = "PSFFORGE_THREADS"


def resolve_threads(flag=None) -> int:
    if flag is not None:
        return max(int(flag), 1)
    env = os.environ.get(ENV_THREADS)
    return max(int(env), 1) if env else 1


def det_map(fn, items, threads: int = 1) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
