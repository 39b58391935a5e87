"""Fixed-size replication blocks with per-block random streams.

A study of ``n`` replications is cut into blocks of ``block_size``.  Block
``b`` always draws from ``RngStream(seed, stream_key(label, b))``, and
results come back in block order, so output is identical for any worker
count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Callable

from .distributions import RngStream, stream_key


def block_sizes(n: int, block_size: int) -> list[int]:
    if n < 1 or block_size < 1:
        raise ValueError("n and block_size must be positive")
    full, rest = divmod(n, block_size)
    return [block_size] * full + ([rest] if rest else [])


def _run_one(func, seed, label, kwargs, item):
    index, size = item
    rng = RngStream(seed, stream_key(label, index))
    return func(rng, size, **kwargs)


def run_blocks(func: Callable, n_reps: int, block_size: int, seed: int, label: str,
               workers: int = 1, /, **kwargs) -> list:
    """Call ``func(rng, size, **kwargs)`` for every block; results in block order."""
    items = list(enumerate(block_sizes(n_reps, block_size)))
    job = partial(_run_one, func, seed, label, kwargs)
    if workers is None or workers < 1:
        workers = os.cpu_count() or 1
    workers = min(workers, len(items))
    if workers <= 1:
        return [job(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, items))
