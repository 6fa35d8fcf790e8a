"""Dense float tensors and the numeric kernels everything else builds on.

A Tensor is an immutable-by-convention wrapper around a contiguous row-major
numpy float array (float32 or float64, chosen by the caller; tests and the
gradient-identity checks run at float64, training defaults to float32).

Binary elementwise ops use numpy-style broadcasting restricted to the usual
cases: equal shapes, axes of extent 1, or missing leading axes.  Gradient
unbroadcasting in the autograd layer mirrors exactly this rule.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DomainError, ShapeError

FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """N-dimensional float array, row-major."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        new = self.data.reshape(shape)
        if new.size != self.data.size:  # pragma: no cover - numpy raises first
            raise ShapeError(f"reshape {self.shape} -> {shape} changes size")
        return Tensor(new)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype))

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"


@dataclass(frozen=True)
class ConvSpec:
    """Square-mask convolution description."""

    kernel: int
    stride: int = 1
    out_channels: int = 1
    padded: bool = False

    def __post_init__(self):
        if self.kernel < 1:
            raise ValueError(f"kernel must be >= 1, got {self.kernel}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.out_channels < 1:
            raise ValueError(f"out_channels must be >= 1, got {self.out_channels}")


def conv_padding(kernel: int, padded: bool):
    """(before, after) per spatial axis; shape-preserving at stride 1.

    Odd kernels pad kernel//2 on each side; even kernels pad one less on the
    leading side so the total is kernel-1.
    """
    if not padded:
        return 0, 0
    before = (kernel - 1) // 2
    return before, kernel - 1 - before


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard matrix product (BLAS; fixed order for fixed shapes)."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    return Tensor(a.data @ b.data)


def conv2d_forward(x: Tensor, weights: Tensor, bias: Tensor, spec: ConvSpec):
    """Cross-correlation via im2col + matmul.

    Returns (output, patch-matrix cache) so backward can reuse the columns.
    x: (n, C, H, W); weights: (F, C, k, k); bias: (F,).
    """
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be 4-D, got {x.shape}")
    n, c, h, w = x.shape
    f, cw, k, k2 = weights.shape
    if k != k2 or k != spec.kernel or cw != c or f != spec.out_channels:
        raise ShapeError(
            f"conv2d weights {weights.shape} do not match input {x.shape} "
            f"and spec {spec}")
    before, after = conv_padding(k, spec.padded)
    hp, wp = h + before + after, w + before + after
    if k > hp or k > wp:
        raise ShapeError(f"kernel {k} larger than padded input {hp}x{wp}")
    if spec.padded:
        xp = np.pad(x.data, ((0, 0), (0, 0), (before, after), (before, after)))
    else:
        xp = x.data
    oh = kernels.out_extent(hp, k, spec.stride)
    ow = kernels.out_extent(wp, k, spec.stride)
    cols = kernels.im2col(xp, k, spec.stride)            # (n*oh*ow, c*k*k)
    wmat = weights.data.reshape(f, c * k * k)
    out = cols @ wmat.T + bias.data
    out = out.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)
    return Tensor(np.ascontiguousarray(out)), cols


def conv2d(x: Tensor, weights: Tensor, bias: Tensor, spec: ConvSpec) -> Tensor:
    out, _ = conv2d_forward(x, weights, bias, spec)
    return out


def conv2d_backward(grad: np.ndarray, cols: np.ndarray, x_shape, weights: Tensor,
                    spec: ConvSpec):
    """Gradients wrt input, weights and bias given the output gradient."""
    n, c, h, w = x_shape
    f, _, k, _ = weights.shape
    before, after = conv_padding(k, spec.padded)
    hp, wp = h + before + after, w + before + after
    gmat = grad.transpose(0, 2, 3, 1).reshape(-1, f)     # (n*oh*ow, f)
    gw = (gmat.T @ cols).reshape(weights.shape)
    gb = gmat.sum(axis=0)
    gcols = gmat @ weights.data.reshape(f, c * k * k)
    gxp = kernels.col2im(gcols, n, c, hp, wp, k, spec.stride)
    if spec.padded:
        gx = gxp[:, :, before:before + h, before:before + w]
    else:
        gx = gxp
    return np.ascontiguousarray(gx), gw, gb


def conv2d_direct(x: Tensor, weights: Tensor, bias: Tensor, spec: ConvSpec) -> Tensor:
    """Six-nested-loop reference. Test oracle only; O(everything)."""
    n, c, h, w = x.shape
    f, _, k, _ = weights.shape
    before, after = conv_padding(k, spec.padded)
    xp = np.pad(x.data, ((0, 0), (0, 0), (before, after), (before, after)))
    hp, wp = xp.shape[2], xp.shape[3]
    if k > hp or k > wp:
        raise ShapeError(f"kernel {k} larger than padded input {hp}x{wp}")
    s = spec.stride
    oh = (hp - k) // s + 1
    ow = (wp - k) // s + 1
    out = np.zeros((n, f, oh, ow), dtype=x.dtype)
    for b in range(n):
        for fo in range(f):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ch in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                acc += xp[b, ch, i * s + ki, j * s + kj] * \
                                    weights.data[fo, ch, ki, kj]
                    out[b, fo, i, j] = acc + bias.data[fo]
    return Tensor(out)


def reduce(t: Tensor, mode: str, axis=None):
    """sum / mean / max / argmax. argmax returns an int64 numpy array
    (indices are not float data); ties break toward the lowest index."""
    if axis is not None and not -t.data.ndim <= axis < t.data.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {t.shape}")
    if mode == "sum":
        return Tensor(np.asarray(t.data.sum(axis=axis), dtype=t.dtype))
    if mode == "mean":
        return Tensor(np.asarray(t.data.mean(axis=axis), dtype=t.dtype))
    if mode == "max":
        return Tensor(np.asarray(t.data.max(axis=axis), dtype=t.dtype))
    if mode == "argmax":
        return np.asarray(t.data.argmax(axis=axis), dtype=np.int64)
    raise ValueError(f"unknown reduce mode {mode!r}")


def _broadcastable(a, b) -> bool:
    try:
        np.broadcast_shapes(a, b)
        return True
    except ValueError:
        return False


def elementwise(t: Tensor, f: str, other: Tensor = None, *, factor: float = None,
                lo: float = None, hi: float = None, strict: bool = True) -> Tensor:
    """Per-element application of one of
    {exp, log, add, sub, mul, div, scale, clamp}."""
    x = t.data
    if f in ("add", "sub", "mul", "div"):
        if other is None:
            raise ValueError(f"{f} needs a second operand")
        if not _broadcastable(t.shape, other.shape):
            raise ShapeError(f"cannot broadcast {t.shape} with {other.shape}")
        y = other.data
        if f == "add":
            return Tensor(x + y)
        if f == "sub":
            return Tensor(x - y)
        if f == "mul":
            return Tensor(x * y)
        return Tensor(x / y)
    if f == "exp":
        return Tensor(np.exp(x))
    if f == "log":
        if strict and np.any(x <= 0):
            raise DomainError("log of non-positive input")
        return Tensor(np.log(x))
    if f == "scale":
        if factor is None:
            raise ValueError("scale needs factor=")
        return Tensor(x * factor)
    if f == "clamp":
        return Tensor(np.clip(x, lo, hi))
    raise ValueError(f"unknown elementwise op {f!r}")


def zeros(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def ones(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype))
