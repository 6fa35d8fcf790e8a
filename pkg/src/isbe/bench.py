"""Benchmark of the hot kernels: numba-jitted loops vs pure numpy.

Shapes mirror the conv layers of the two benchmark networks at batch 100.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import kernels

# (label, n, c, h, w, k, stride)
DEFAULT_CASES = [
    ("28x28 k3 s2 c1", 100, 1, 28, 28, 3, 2),
    ("13x13 k3 s2 c32", 100, 32, 13, 13, 3, 2),
    ("26x26 k3 s1 c32", 100, 32, 26, 26, 3, 1),
    ("12x12 k3 s1 c64", 100, 64, 12, 12, 3, 1),
]


@dataclass
class BenchRow:
    case: str
    op: str
    numpy_ms: float
    numba_ms: float

    @property
    def speedup(self):
        return self.numpy_ms / self.numba_ms if self.numba_ms else float("nan")


def _time(fn, repeats: int) -> float:
    fn()  # warm-up (and jit compile)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def run_bench(cases=DEFAULT_CASES, repeats: int = 5, dtype=np.float32):
    if kernels.im2col_numba is None:
        raise RuntimeError("numba not available; nothing to compare")
    rng = np.random.default_rng(0)
    rows = []
    for label, n, c, h, w, k, stride in cases:
        x = rng.standard_normal((n, c, h, w)).astype(dtype)
        oh = kernels.out_extent(h, k, stride)
        ow = kernels.out_extent(w, k, stride)
        cols = rng.standard_normal((n * oh * ow, c * k * k)).astype(dtype)
        rows.append(BenchRow(
            label, "im2col",
            _time(lambda: kernels.im2col_numpy(x, k, stride), repeats),
            _time(lambda: kernels.im2col_numba(x, k, stride), repeats)))
        rows.append(BenchRow(
            label, "col2im",
            _time(lambda: kernels.col2im_numpy(cols, n, c, h, w, k, stride), repeats),
            _time(lambda: kernels.col2im_numba(cols, n, c, h, w, k, stride), repeats)))
    return rows


def format_table(rows) -> str:
    lines = [f"{'case':<20} {'op':<8} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}"]
    for r in rows:
        lines.append(f"{r.case:<20} {r.op:<8} {r.numpy_ms:>10.3f} "
                     f"{r.numba_ms:>10.3f} {r.speedup:>7.2f}x")
    return "\n".join(lines)
