"""Small shared helpers: deterministic parallel map and seed derivation."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np


def parallel_map(fn, items, threads=1):
    """Map ``fn`` over ``items`` with results gathered in input order.

    Results are assembled by index, so the output is independent of the
    number of worker threads.
    """
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def spawn_rngs(seed, n):
    """Derive ``n`` independent reproducible generators from one seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.default_rng(c) for c in children]


def rng_from(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
