"""Order-preserving thread map; results never depend on the worker count."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

_threads: int | None = None


def set_threads(n: int | None) -> None:
    global _threads
    if n is not None and n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = n


def get_threads() -> int:
    return _threads or os.cpu_count() or 1


def pmap(fn: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> list[R]:
    items = list(items)
    n = threads or get_threads()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
