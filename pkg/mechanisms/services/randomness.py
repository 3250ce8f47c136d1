"""
Counter-based random streams and the keyed worker pool.

Every random draw in the services comes from a generator addressed by
(seed, stream, indices...). Work is cut into chunks whose keys never depend on
the worker count, so results are bit-identical for any ``jobs``.
"""

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar

import numpy as np
from django.conf import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class Stream(enum.IntEnum):
    """Purpose tags; the first component of every spawn key."""
    PRIOR = 1
    ESTIMATE = 2
    COST = 3
    PAYMENT = 4
    AUDIT = 5
    LOWER_BOUND = 6
    MECHANISM = 7
    SOCIAL_COST = 8


def keyed_generator(seed: int, stream: Stream, *indices: int) -> np.random.Generator:
    """Philox generator for the given seed and key."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = (int(stream),) + tuple(int(i) for i in indices)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def resolve_jobs(jobs: Optional[int] = None) -> int:
    if jobs is None:
        jobs = getattr(settings, "COSTSHARE_JOBS", 1)
    return max(1, int(jobs))


def chunk_sizes(total: int, chunk: Optional[int] = None) -> List[int]:
    """Split ``total`` rows into fixed-size chunks (last one shorter)."""
    if chunk is None:
        chunk = getattr(settings, "COSTSHARE_CHUNK_ROWS", 10_000)
    chunk = max(1, int(chunk))
    sizes = [chunk] * (total // chunk)
    if total % chunk:
        sizes.append(total % chunk)
    return sizes


def profile_chunks(total: int, n: int) -> List[int]:
    """Chunks of whole profiles holding at most COSTSHARE_CHUNK_CELLS values each."""
    rows = getattr(settings, "COSTSHARE_CHUNK_ROWS", 10_000)
    cells = getattr(settings, "COSTSHARE_CHUNK_CELLS", 2_000_000)
    return chunk_sizes(total, max(1, min(rows, cells // max(1, n))))


def keyed_map(func: Callable[[T], R], tasks: Iterable[T], jobs: Optional[int] = None) -> List[R]:
    """
    Apply ``func`` to every task, preserving task order.

    Tasks must carry their own random keys; the pool only changes wall time.
    """
    tasks = list(tasks)
    workers = resolve_jobs(jobs)
    if workers == 1 or len(tasks) <= 1:
        return [func(task) for task in tasks]
    logger.debug(f"Dispatching {len(tasks)} keyed tasks to {workers} workers")
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, tasks))


def mean_and_se(values: Sequence[float]) -> tuple:
    """Sample mean and its standard error for equally weighted draws."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return 0.0, 0.0
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / np.sqrt(arr.size))
