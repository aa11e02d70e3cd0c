# src/utils/parallel.py
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

logger = logging.getLogger(__name__)

THREADS_ENV = "KPDIFF_THREADS"

T = TypeVar("T")
R = TypeVar("R")


def resolve_threads(requested: Optional[int] = None) -> int:
    """Worker count: explicit value, else $KPDIFF_THREADS, else 1."""
    if requested is not None:
        if requested < 1:
            raise ValueError(f"threads must be >= 1, got {requested}")
        return requested
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        logger.warning("ignoring %s=%r (not an integer)", THREADS_ENV, raw)
        return 1
    return max(1, value)


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """fn over items; results come back in input order whatever the worker count."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))
