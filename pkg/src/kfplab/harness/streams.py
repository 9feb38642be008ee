"""Deterministic random streams and chunked execution.

Work is cut into chunks of a fixed size that does not depend on the number of
workers. Each chunk draws from its own stream keyed by ``(seed, *key)`` and
results are combined in chunk order, so output is identical for any worker
count.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np

CHUNK = 2048


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``key`` under ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed) % (1 << 64), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def chunk_sizes(n: int, chunk: int = CHUNK) -> list[int]:
    full, rest = divmod(int(n), chunk)
    return [chunk] * full + ([rest] if rest else [])


def run_chunks(fn: Callable, jobs: Sequence, workers: int = 1) -> list:
    """Apply ``fn`` to every job, preserving job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def ordered_sum(parts: Iterable[np.ndarray]) -> np.ndarray:
    """Sum per-chunk arrays left to right (fixed association order)."""
    it = iter(parts)
    total = np.array(next(it), dtype=float, copy=True)
    for part in it:
        total = total + part
    return total
