"""Bounded worker pool that preserves result order.

Work units (trials, repeats, per-participant extraction) are independent and
seeded, and results merge by index, so the worker count never changes
output values.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def default_threads() -> int:
    return os.cpu_count() or 1


def run_parallel(
    fn: Callable[[T], R], items: Sequence[T], threads: int | None = None
) -> list[R]:
    items = list(items)
    if threads is None:
        threads = default_threads()
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    chunksize = max(1, len(items) // (threads * 4))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))


def imap_parallel(
    fn: Callable[[T], R], items: Iterable[T], threads: int | None = None
) -> Iterable[R]:
    """Streaming variant for large item sets; results still arrive in order."""
    if threads is None:
        threads = default_threads()
    if threads <= 1:
        for item in items:
            yield fn(item)
        return
    with ProcessPoolExecutor(max_workers=threads) as pool:
        yield from pool.map(fn, items, chunksize=4)
