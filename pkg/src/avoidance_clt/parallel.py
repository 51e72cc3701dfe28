"""Deterministic parallel map over logical task indices.

Tasks are cut into fixed-size blocks that depend only on the task count, and
results are collected by block position, so the output never depends on the
number of workers or on scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

from .errors import InvalidArgumentError

WORKERS_ENV = "AVOIDANCE_CLT_WORKERS"
BLOCK = 64


def default_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover - non-Linux
        return max(1, os.cpu_count() or 1)


def resolve_workers(flag: int | None = None) -> int:
    """Worker count: explicit flag, else the environment variable, else the core count."""
    if flag is not None:
        value = flag
    elif os.environ.get(WORKERS_ENV):
        try:
            value = int(os.environ[WORKERS_ENV])
        except ValueError:
            raise InvalidArgumentError(f"{WORKERS_ENV} must be an integer") from None
    else:
        value = default_workers()
    if value < 1:
        raise InvalidArgumentError(f"worker count must be >= 1, got {value}")
    return value


def blocks(n: int, size: int = BLOCK) -> list[range]:
    return [range(s, min(n, s + size)) for s in range(0, n, size)]


def run_chunked(fn: Callable[[Sequence[int]], list], n: int, workers: int = 1, size: int = BLOCK) -> list:
    """Apply ``fn`` to fixed blocks of ``range(n)`` and concatenate in index order.

    ``fn`` must be picklable when ``workers > 1``.
    """
    parts = blocks(n, size)
    if workers <= 1 or len(parts) <= 1:
        out = []
        for b in parts:
            out.extend(fn(b))
        return out
    with ProcessPoolExecutor(max_workers=min(workers, len(parts))) as pool:
        results = list(pool.map(fn, parts))
    return [v for r in results for v in r]
