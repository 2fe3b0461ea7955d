"""Thread-level replica parallelism.

The compiled kernels release the GIL, so replicas split into contiguous
chunks run concurrently on a thread pool.  Each replica owns its own random
stream, which makes the filled array independent of the thread count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

_threads = 1


def set_threads(n: int | None) -> int:
    """Set the worker count used by :func:`fill_chunks` (``None`` or 0: all cores)."""
    global _threads
    if not n:
        n = os.cpu_count() or 1
    if n < 1:
        raise ValueError("thread count must be positive")
    _threads = int(n)
    return _threads


def get_threads() -> int:
    return _threads


def fill_chunks(fill, out, threads: int | None = None, min_chunk: int = 256):
    """Call ``fill(sample0, out[sample0:sample1])`` over contiguous chunks of ``out``."""
    n = out.shape[0]
    threads = threads or _threads
    if threads <= 1 or n < 2 * min_chunk:
        fill(0, out)
        return out
    n_chunks = min(threads * 4, max(1, n // min_chunk))
    bounds = [n * k // n_chunks for k in range(n_chunks + 1)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fill, a, out[a:b]) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        for f in futures:
            f.result()
    return out
