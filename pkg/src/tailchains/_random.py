"""Random-stream plumbing.

Splitting rule: a master integer seed is turned into a
``numpy.random.SeedSequence``; child streams are ``SeedSequence(seed).spawn(k)``
in order, and each child drives its own ``PCG64`` generator. Work is cut into
chunks of a fixed size that does not depend on the number of threads, so the
output for a given seed is the same whatever the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK = 20_000


def as_generator(stream) -> np.random.Generator:
    if isinstance(stream, np.random.Generator):
        return stream
    return np.random.default_rng(stream)


def spawn(seed, k: int) -> list[np.random.Generator]:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(child)) for child in ss.spawn(k)]


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("TAILCHAIN_THREADS")
    n = requested or os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def chunk_sizes(n: int, chunk: int = CHUNK) -> list[int]:
    full, rest = divmod(n, chunk)
    return [chunk] * full + ([rest] if rest else [])


def parallel_map_chunks(func, n: int, seed, workers: int | None = None, chunk: int = CHUNK):
    """Run ``func(size, rng)`` over fixed-size chunks with split streams.

    Returns the list of per-chunk results in chunk order.
    """
    sizes = chunk_sizes(n, chunk)
    rngs = spawn(seed, len(sizes))
    nw = min(worker_count(workers), len(sizes)) if sizes else 1
    if nw <= 1:
        return [func(size, rng) for size, rng in zip(sizes, rngs)]
    with ThreadPoolExecutor(max_workers=nw) as pool:
        return list(pool.map(func, sizes, rngs))
