"""Hot numeric kernels: im2col / col2im gather-scatter loops.

Two interchangeable implementations exist: numba-jitted loops (default) and
pure numpy (stride tricks / vectorized scatter).  Selection happens once at
import time via the ISBE_KERNELS environment variable:

    ISBE_KERNELS=numpy   force the pure-numpy path
    ISBE_KERNELS=numba   force numba (error if numba is missing)

unset -> numba when importable, numpy otherwise.  Both paths use a fixed
summation/scatter order, so results are bit-stable run to run.
"""

import os

import numpy as np
from numpy.lib.stride_tricks import as_strided

try:
    from numba import njit

    _NUMBA_OK = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _NUMBA_OK = False

_REQUESTED = os.environ.get("ISBE_KERNELS", "").strip().lower()
if _REQUESTED == "numpy":
    USE_NUMBA = False
elif _REQUESTED == "numba":
    if not _NUMBA_OK:
        raise ImportError("ISBE_KERNELS=numba but numba is not importable")
    USE_NUMBA = True
else:
    USE_NUMBA = _NUMBA_OK


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def out_extent(extent: int, k: int, stride: int) -> int:
    """Number of kernel placements along one (already padded) axis."""
    return (extent - k) // stride + 1


# ---------------------------------------------------------------- numpy path

def im2col_numpy(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(n,C,Hp,Wp) -> (n*oh*ow, C*k*k) patch matrix. xp must be pre-padded."""
    n, c, hp, wp = xp.shape
    oh = out_extent(hp, k, stride)
    ow = out_extent(wp, k, stride)
    sn, sc, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(n, oh, ow, c, k, k),
        strides=(sn, sh * stride, sw * stride, sc, sh, sw),
    )
    return np.ascontiguousarray(view).reshape(n * oh * ow, c * k * k)


def col2im_numpy(cols: np.ndarray, n: int, c: int, hp: int, wp: int,
                 k: int, stride: int) -> np.ndarray:
    """Scatter-add transpose of im2col_numpy; returns the padded-shape grad."""
    oh = out_extent(hp, k, stride)
    ow = out_extent(wp, k, stride)
    patches = cols.reshape(n, oh, ow, c, k, k)
    xp = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += \
                patches[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    return xp


# ---------------------------------------------------------------- numba path

if _NUMBA_OK:

    @njit(cache=True)
    def _im2col_jit(xp, k, stride, out):
        n, c, hp, wp = xp.shape
        oh = (hp - k) // stride + 1
        ow = (wp - k) // stride + 1
        for b in range(n):
            for i in range(oh):
                for j in range(ow):
                    row = (b * oh + i) * ow + j
                    col = 0
                    for ch in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                out[row, col] = xp[b, ch, i * stride + ki,
                                                   j * stride + kj]
                                col += 1

    @njit(cache=True)
    def _col2im_jit(cols, k, stride, xp):
        n, c, hp, wp = xp.shape
        oh = (hp - k) // stride + 1
        ow = (wp - k) // stride + 1
        for b in range(n):
            for i in range(oh):
                for j in range(ow):
                    row = (b * oh + i) * ow + j
                    col = 0
                    for ch in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                xp[b, ch, i * stride + ki, j * stride + kj] += \
                                    cols[row, col]
                                col += 1

    def im2col_numba(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
        n, c, hp, wp = xp.shape
        oh = out_extent(hp, k, stride)
        ow = out_extent(wp, k, stride)
        out = np.empty((n * oh * ow, c * k * k), dtype=xp.dtype)
        _im2col_jit(np.ascontiguousarray(xp), k, stride, out)
        return out

    def col2im_numba(cols: np.ndarray, n: int, c: int, hp: int, wp: int,
                     k: int, stride: int) -> np.ndarray:
        xp = np.zeros((n, c, hp, wp), dtype=cols.dtype)
        _col2im_jit(np.ascontiguousarray(cols), k, stride, xp)
        return xp

else:  # pragma: no cover
    im2col_numba = None
    col2im_numba = None


if USE_NUMBA:
    im2col = im2col_numba
    col2im = col2im_numba
else:
    im2col = im2col_numpy
    col2im = col2im_numpy
