"""Integrated cross-entropy-over-softmax loss with none/mean/sum reductions.

The integrated form never takes log of a softmax output: it evaluates
log-sum-exp directly (with per-row max subtraction), so extreme raw scores
stay finite.  Its backward is the closed form softmax(x) - targets, scaled by
the reduction; a composed elementary-op path is kept alongside as a second,
independently differentiated oracle for tests.

The numerically fragile separated form (cross-entropy applied to softmax
outputs) is retained only as a test oracle.
"""

import logging

import numpy as np

from .autograd import Tape, register_op
from .errors import DomainError, ShapeError
from .tensor import Tensor

log = logging.getLogger(__name__)

REDUCTIONS = ("none", "mean", "sum")


def softmax(x: Tensor) -> Tensor:
    """Rowwise softmax with max subtraction; rows sum to 1."""
    data = np.atleast_2d(x.data)
    if np.isnan(data).any():
        log.warning("softmax received NaN input; propagating")
    m = data.max(axis=1, keepdims=True)
    e = np.exp(data - m)
    out = e / e.sum(axis=1, keepdims=True)
    return Tensor(out.reshape(x.shape))


def log_sum_exp(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=1, keepdims=True)))[:, 0]


def _check_pair(x: Tensor, targets: Tensor):
    if x.shape != targets.shape or x.data.ndim != 2:
        raise ShapeError(f"scores {x.shape} vs targets {targets.shape}")
    if np.any(targets.data < 0):
        raise DomainError("negative target entries")


def _ce_rows(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    return log_sum_exp(x) * t.sum(axis=1) - (t * x).sum(axis=1)


def cross_entropy_integrated(x: Tensor, targets: Tensor, reduction: str = "mean") -> Tensor:
    """Pure-function form; see ce_softmax for the recorded (trainable) form."""
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}, got {reduction!r}")
    _check_pair(x, targets)
    z = _ce_rows(x.data, targets.data)
    if reduction == "none":
        return Tensor(z)
    if reduction == "mean":
        return Tensor(np.asarray(z.mean(), dtype=x.dtype))
    return Tensor(np.asarray(z.sum(), dtype=x.dtype))


def cross_entropy_separated_oracle(y: Tensor, targets: Tensor) -> Tensor:
    """-sum_j t_j ln y_j on already-normalized scores. Oracle use only:
    this is the form that blows up near zero scores."""
    if y.shape != targets.shape:
        raise ShapeError(f"scores {y.shape} vs targets {targets.shape}")
    if np.any((y.data <= 0) & (targets.data > 0)):
        raise DomainError("ln of non-positive normalized score")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(targets.data > 0, targets.data * np.log(y.data), 0.0)
    return Tensor(-terms.sum(axis=1))


# ---------------------------------------------------------------- tape forms

def _bw_ce_softmax(node, g, vals):
    t = node.saved["targets"]
    red = node.saved["reduction"]
    # softmax is needed only by the gradient, so it is computed here rather
    # than in the forward (the loss value itself goes through log-sum-exp)
    y = softmax(Tensor(node.saved["x"])).data
    diff = y - t
    if red == "none":
        return [g[:, None] * diff]
    if red == "mean":
        return [(g / y.shape[0]) * diff]
    return [g * diff]


register_op("ce_softmax", _bw_ce_softmax)


def ce_softmax(tape: Tape, x_id: int, targets: Tensor, reduction: str = "mean") -> int:
    """Record the fused loss; backward is the closed form (softmax(x) - targets)
    with the reduction's scaling, evaluating the softmax lazily."""
    x = tape.value(x_id)
    z = cross_entropy_integrated(x, targets, reduction)
    return tape.record("ce_softmax", (x_id,), z,
                       x=x.data, targets=targets.data, reduction=reduction)


def ce_softmax_composed(tape: Tape, x_id: int, targets: Tensor,
                        reduction: str = "mean") -> int:
    """Same loss assembled from elementary tape ops (independent backward
    path used to cross-check the fused closed form)."""
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}, got {reduction!r}")
    x = tape.value(x_id)
    _check_pair(x, targets)
    # row max treated as a constant: exact for the forward value and leaves
    # the gradient unchanged (shift invariance of the loss)
    m = tape.leaf(Tensor(x.data.max(axis=1, keepdims=True)))
    shifted = tape.sub(x_id, m)
    lse = tape.add(tape.log(tape.sum(tape.exp(shifted), axis=1, keepdims=True)), m)
    t_id = tape.leaf(targets)
    tsum = tape.sum(t_id, axis=1, keepdims=True)
    dot = tape.sum(tape.mul(t_id, x_id), axis=1, keepdims=True)
    z_rows = tape.reshape(tape.sub(tape.mul(lse, tsum), dot), (x.shape[0],))
    if reduction == "none":
        return z_rows
    if reduction == "mean":
        return tape.mean(z_rows)
    return tape.sum(z_rows)
