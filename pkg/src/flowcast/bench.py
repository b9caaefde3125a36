"""Wall-time and peak-memory comparison of the two attention kernels.

The quadratic kernel materializes an M x M score matrix; the linear one
accumulates a d x d summary. Timing over a geometric range of token
counts exposes the O(M^2) vs O(M) separation directly.
"""

from __future__ import annotations

import time
import tracemalloc
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import linear_attention, softmax_attention
from .tensor import Tensor

__all__ = ["BenchRow", "run_benchmark", "crosscheck_kernels", "DEFAULT_BUDGET"]

# Largest M*M score-matrix entry count the quadratic kernel may allocate
# (64M entries = 512 MB of f64).
DEFAULT_BUDGET = 64 * 1024 * 1024


@dataclass
class BenchRow:
    m: int
    variant: str
    seconds: float
    bytes: int

    def csv_row(self) -> str:
        return f"{self.m},{self.variant},{self.seconds:.9f},{self.bytes}"


CSV_HEADER = "m,variant,seconds,bytes"

_VARIANTS = {
    "quadratic": softmax_attention,
    "linear": linear_attention,
}


def crosscheck_kernels(dim: int, seed: int = 0) -> None:
    """Refuse to benchmark divergent implementations.

    Checks the single-token identity (both kernels must return v) and the
    convex-hull property of the linear kernel on a random instance.
    """
    rng = np.random.default_rng(seed)
    v1 = rng.normal(size=(1, dim))
    one = [Tensor(rng.normal(size=(1, dim))), Tensor(rng.normal(size=(1, dim)))]
    for name, fn in _VARIANTS.items():
        out = fn(one[0], one[1], Tensor(v1)).data
        if np.max(np.abs(out - v1)) > 1e-9:
            raise AssertionError(f"{name} kernel fails the single-token identity")

    q = Tensor(rng.uniform(-2, 2, (64, dim)))
    k = Tensor(rng.uniform(-2, 2, (64, dim)))
    v = rng.normal(size=(64, dim))
    out = linear_attention(q, k, Tensor(v)).data
    if np.any(out < v.min(axis=0) - 1e-10) or np.any(out > v.max(axis=0) + 1e-10):
        raise AssertionError("linear kernel output left the value convex hull")


def _time_once(fn, q, k, v) -> float:
    start = time.perf_counter()
    with T.no_grad():
        fn(q, k, v)
    return time.perf_counter() - start


def _peak_bytes(fn, q, k, v) -> int:
    tracemalloc.start()
    try:
        with T.no_grad():
            fn(q, k, v)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return int(peak)


def run_benchmark(
    sizes: list[int],
    dim: int = 16,
    repeats: int = 5,
    budget: int = DEFAULT_BUDGET,
    seed: int = 0,
    log=None,
) -> list[BenchRow]:
    """Median-of-repeats timings plus a separate traced-memory pass.

    Quadratic runs whose M^2 exceeds ``budget`` are skipped (with a log
    line), never failed: the point of the budget is to keep the quadratic
    kernel from taking the host down.
    """
    crosscheck_kernels(dim, seed)
    rng = np.random.default_rng(seed)
    rows: list[BenchRow] = []
    for m in sizes:
        q = Tensor(rng.uniform(-1, 1, (m, dim)))
        k = Tensor(rng.uniform(-1, 1, (m, dim)))
        v = Tensor(rng.normal(size=(m, dim)))
        for variant, fn in _VARIANTS.items():
            if variant == "quadratic" and m * m > budget:
                if log:
                    log(
                        f"skip quadratic at m={m}: score matrix "
                        f"({m * m} entries) exceeds budget {budget}"
                    )
                continue
            _time_once(fn, q, k, v)  # warm-up
            times = sorted(_time_once(fn, q, k, v) for _ in range(repeats))
            median = times[len(times) // 2]
            rows.append(
                BenchRow(m, variant, median, _peak_bytes(fn, q, k, v))
            )
            if log:
                log(f"m={m} {variant}: {median * 1e3:.3f} ms, "
                    f"{rows[-1].bytes / 1e6:.1f} MB peak")
    return rows
