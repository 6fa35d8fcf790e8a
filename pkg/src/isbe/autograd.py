"""Reverse-mode automatic differentiation over tensor kernels.

A Tape is a define-by-run computation graph: node ids are topologically
ordered by construction, forward values are computed eagerly at record time,
and backward starts from any node with a caller-supplied seed gradient.
Seeding an interior node directly (instead of appending a scalar loss head)
is a first-class operation - the ISBE training path depends on it.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError
from .tensor import ConvSpec, Tensor, conv2d_backward, conv2d_forward


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcasted gradient back down to the operand's shape."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


@dataclass
class Node:
    kind: str
    inputs: tuple
    value: Tensor
    saved: dict = field(default_factory=dict)


# kind -> fn(node, grad: ndarray, input_values: list[Tensor]) -> list[ndarray|None]
_BACKWARD = {}


def register_op(kind: str, backward_fn):
    """Hook for modules that contribute fused ops with custom backwards."""
    _BACKWARD[kind] = backward_fn


class Tape:
    """Append-only operation record; single-threaded; rebuilt every batch."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.grads: dict[int, np.ndarray] = {}

    # ------------------------------------------------------------- recording

    def record(self, kind: str, inputs, value: Tensor, **saved) -> int:
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ValueError(f"input node {i} not on tape")
        self.nodes.append(Node(kind, tuple(inputs), value, saved))
        return len(self.nodes) - 1

    def leaf(self, t: Tensor) -> int:
        return self.record("leaf", (), t)

    def value(self, nid: int) -> Tensor:
        return self.nodes[nid].value

    # ------------------------------------------------------------ operations

    def add(self, a: int, b: int) -> int:
        return self.record("add", (a, b), Tensor(self.value(a).data + self.value(b).data))

    def sub(self, a: int, b: int) -> int:
        return self.record("sub", (a, b), Tensor(self.value(a).data - self.value(b).data))

    def mul(self, a: int, b: int) -> int:
        return self.record("mul", (a, b), Tensor(self.value(a).data * self.value(b).data))

    def div(self, a: int, b: int) -> int:
        return self.record("div", (a, b), Tensor(self.value(a).data / self.value(b).data))

    def scale(self, a: int, factor: float) -> int:
        return self.record("scale", (a,), Tensor(self.value(a).data * factor),
                           factor=factor)

    def exp(self, a: int) -> int:
        return self.record("exp", (a,), Tensor(np.exp(self.value(a).data)))

    def log(self, a: int) -> int:
        x = self.value(a).data
        if np.any(x <= 0):
            raise DomainError("log of non-positive input")
        return self.record("log", (a,), Tensor(np.log(x)))

    def relu(self, a: int) -> int:
        return self.record("relu", (a,), Tensor(np.maximum(self.value(a).data, 0)))

    def clamp(self, a: int, lo: float, hi: float) -> int:
        return self.record("clamp", (a,), Tensor(np.clip(self.value(a).data, lo, hi)),
                           lo=lo, hi=hi)

    def matmul(self, a: int, b: int) -> int:
        av, bv = self.value(a), self.value(b)
        if av.data.ndim != 2 or bv.data.ndim != 2 or av.shape[1] != bv.shape[0]:
            raise ShapeError(f"matmul shapes incompatible: {av.shape} x {bv.shape}")
        return self.record("matmul", (a, b), Tensor(av.data @ bv.data))

    def conv2d(self, x: int, w: int, b: int, spec: ConvSpec) -> int:
        out, cols = conv2d_forward(self.value(x), self.value(w), self.value(b), spec)
        return self.record("conv2d", (x, w, b), out, cols=cols, spec=spec)

    def reshape(self, a: int, shape) -> int:
        av = self.value(a)
        return self.record("reshape", (a,), av.reshape(shape), orig=av.shape)

    def dropout(self, a: int, rate: float, rng: np.random.Generator,
                training: bool) -> int:
        av = self.value(a)
        if not training or rate == 0.0:
            return self.record("reshape", (a,), av, orig=av.shape)
        # inverted dropout: kept activations scaled so E[output] == input
        mask = (rng.random(av.shape) >= rate).astype(av.dtype)
        keep = 1.0 / (1.0 - rate)
        return self.record("dropout", (a,), Tensor(av.data * mask * keep),
                           mask=mask, keep=keep)

    def sum(self, a: int, axis=None, keepdims: bool = False) -> int:
        av = self.value(a)
        val = np.asarray(av.data.sum(axis=axis, keepdims=keepdims), dtype=av.dtype)
        return self.record("sum", (a,), Tensor(val), axis=axis,
                           keepdims=keepdims, orig=av.shape)

    def mean(self, a: int, axis=None, keepdims: bool = False) -> int:
        av = self.value(a)
        val = np.asarray(av.data.mean(axis=axis, keepdims=keepdims), dtype=av.dtype)
        return self.record("mean", (a,), Tensor(val), axis=axis,
                           keepdims=keepdims, orig=av.shape)

    # -------------------------------------------------------------- backward

    def backward(self, seed_node: int, seed_grad: Tensor) -> dict[int, Tensor]:
        """Propagate a seed gradient from seed_node to all its ancestors.

        Returns (and stores) the grad map; fan-out accumulates additively,
        unreachable nodes read back as zero via grad()."""
        if seed_grad.shape != self.value(seed_node).shape:
            raise ShapeError(
                f"seed grad shape {seed_grad.shape} != node output shape "
                f"{self.value(seed_node).shape}")
        grads: dict[int, np.ndarray] = {seed_node: seed_grad.data.copy()}
        for nid in range(seed_node, -1, -1):
            if nid not in grads:
                continue
            node = self.nodes[nid]
            if node.kind == "leaf":
                continue
            g = grads[nid]
            vals = [self.value(i) for i in node.inputs]
            input_grads = _BACKWARD[node.kind](node, g, vals)
            for i, ig in zip(node.inputs, input_grads):
                if ig is None:
                    continue
                if i in grads:
                    grads[i] = grads[i] + ig
                else:
                    grads[i] = ig
        self.grads = grads
        return {nid: Tensor(g) for nid, g in grads.items()}

    def grad(self, nid: int) -> Tensor:
        g = self.grads.get(nid)
        if g is None:
            return Tensor(np.zeros(self.value(nid).shape, dtype=self.value(nid).dtype))
        return Tensor(g)

    def zero_grad(self):
        self.grads = {}


def _expand_reduced(g, axis, keepdims, orig):
    if axis is None:
        return np.broadcast_to(g, orig)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, orig)


def _bw_add(node, g, vals):
    return [_unbroadcast(g, vals[0].shape), _unbroadcast(g, vals[1].shape)]


def _bw_sub(node, g, vals):
    return [_unbroadcast(g, vals[0].shape), _unbroadcast(-g, vals[1].shape)]


def _bw_mul(node, g, vals):
    return [_unbroadcast(g * vals[1].data, vals[0].shape),
            _unbroadcast(g * vals[0].data, vals[1].shape)]


def _bw_div(node, g, vals):
    x, y = vals[0].data, vals[1].data
    return [_unbroadcast(g / y, vals[0].shape),
            _unbroadcast(-g * x / (y * y), vals[1].shape)]


def _bw_scale(node, g, vals):
    return [g * node.saved["factor"]]


def _bw_exp(node, g, vals):
    return [g * node.value.data]


def _bw_log(node, g, vals):
    return [g / vals[0].data]


def _bw_relu(node, g, vals):
    # subgradient 0 at the kink
    return [g * (vals[0].data > 0)]


def _bw_clamp(node, g, vals):
    x = vals[0].data
    inside = (x > node.saved["lo"]) & (x < node.saved["hi"])
    return [g * inside]


def _bw_matmul(node, g, vals):
    a, b = vals[0].data, vals[1].data
    return [g @ b.T, a.T @ g]


def _bw_conv2d(node, g, vals):
    gx, gw, gb = conv2d_backward(g, node.saved["cols"], vals[0].shape,
                                 vals[1], node.saved["spec"])
    return [gx, gw, gb]


def _bw_reshape(node, g, vals):
    return [g.reshape(node.saved["orig"])]


def _bw_dropout(node, g, vals):
    return [g * node.saved["mask"] * node.saved["keep"]]


def _bw_sum(node, g, vals):
    return [np.ascontiguousarray(
        _expand_reduced(g, node.saved["axis"], node.saved["keepdims"],
                        node.saved["orig"]))]


def _bw_mean(node, g, vals):
    axis = node.saved["axis"]
    orig = node.saved["orig"]
    count = np.prod(orig) if axis is None else orig[axis]
    expanded = _expand_reduced(g, axis, node.saved["keepdims"], orig)
    return [np.ascontiguousarray(expanded / count)]


for _kind, _fn in [
    ("add", _bw_add), ("sub", _bw_sub), ("mul", _bw_mul), ("div", _bw_div),
    ("scale", _bw_scale), ("exp", _bw_exp), ("log", _bw_log),
    ("relu", _bw_relu), ("clamp", _bw_clamp), ("matmul", _bw_matmul),
    ("conv2d", _bw_conv2d), ("reshape", _bw_reshape), ("dropout", _bw_dropout),
    ("sum", _bw_sum), ("mean", _bw_mean),
]:
    register_op(_kind, _fn)
