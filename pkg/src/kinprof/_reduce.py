"""Deterministic reductions and the worker-count switch.

Every quadrature in this package funnels through tree_sum, a fixed
pairwise fold whose association order depends only on the array length.
Parallel sections compute independent slots and combine them here in
index order, so serial and threaded runs agree bit for bit.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numpy.typing import NDArray

_THREADS = 1


def set_threads(n: int) -> None:
    global _THREADS
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _THREADS = int(n)


def get_threads() -> int:
    return _THREADS


def tree_sum(a: NDArray[np.float64]) -> float:
    """Sum by a fixed power-of-two pairwise fold.

    The fold pads with zeros to the next power of two and repeatedly adds
    element pairs, so the rounding pattern is a function of len(a) alone.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    n = a.size
    if n == 0:
        return 0.0
    m = 1 << (n - 1).bit_length()
    buf = np.zeros(m, dtype=np.float64)
    buf[:n] = a
    while buf.size > 1:
        buf = buf[0::2] + buf[1::2]
    return float(buf[0])


def tree_dot(a: NDArray[np.float64], b: NDArray[np.float64]) -> float:
    return tree_sum(np.asarray(a, dtype=np.float64) * np.asarray(b, dtype=np.float64))


def indexed_map(fn, n: int):
    """Evaluate fn(i) for i in range(n), honoring the worker-count switch.

    Results come back as a list in index order regardless of scheduling;
    fn must be pure. Threads only pay off when fn releases the GIL (numpy
    kernels do), which is exactly the case in the pair loops that use this.
    """
    if _THREADS == 1 or n < 4:
        return [fn(i) for i in range(n)]
    out = [None] * n
    with ThreadPoolExecutor(max_workers=_THREADS) as pool:
        for i, res in zip(range(n), pool.map(fn, range(n))):
            out[i] = res
    return out
