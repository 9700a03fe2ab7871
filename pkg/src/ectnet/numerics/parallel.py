"""Thread control for the BLAS backend.

Kernels are pure numpy; the only parallelism is inside BLAS matmuls. One
thread is the sequential reference mode used by the acceptance suite. With
more threads results may differ by floating-point reassociation only
(relative 1e-6 or better in practice).
"""
from __future__ import annotations

import contextlib

from threadpoolctl import threadpool_limits

PARALLEL_RTOL = 1e-6


@contextlib.contextmanager
def threads(n: int = 1):
    if n < 1:
        raise ValueError("thread count must be >= 1")
    with threadpool_limits(limits=n):
        yield
