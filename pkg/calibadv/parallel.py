# calibadv/parallel.py
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from .errors import ConfigError

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "CALIBADV_THREADS"


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def ordered_map(fn: Callable[[T], R], items: Iterable[T], *, workers: Optional[int] = None) -> List[R]:
    """Map over items on a thread pool; results keep input order and the
    first failing item's exception is re-raised."""
    items = list(items)
    n = workers if workers is not None else worker_count()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
