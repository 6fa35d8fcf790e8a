"""Score-normalization unit: forward soft scores, backward error injection.

Forward: normalize raw scores with one of six activations.  Backward: the
seed gradient injected into the network at the raw-score node is simply
normalized-minus-target; the normalization's own Jacobian is deliberately
never applied, and the forward here runs outside the autograd tape.

No loss value is ever differentiated on this path; a mean-square error over
soft scores is computed only for curve logging.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .loss import softmax
from .tensor import Tensor

NORMALIZATION_KINDS = ("softmax", "sigmoid", "tanh", "hardsigmoid", "hardtanh", "pnorm")

# [0,1]-ranged activations take unit-range targets; [-1,1]-ranged ones take
# the affinely adjusted 2*row-1 encoding.
SYMMETRIC_RANGE = {"tanh": True, "hardtanh": True,
                   "softmax": False, "sigmoid": False, "hardsigmoid": False,
                   "pnorm": False}


@dataclass(frozen=True)
class Normalization:
    kind: str
    p: float = 2.0

    def __post_init__(self):
        if self.kind not in NORMALIZATION_KINDS:
            raise ValueError(f"kind must be one of {NORMALIZATION_KINDS}, "
                             f"got {self.kind!r}")
        if self.kind == "pnorm" and self.p < 1:
            raise ValueError(f"pnorm requires p >= 1, got {self.p}")


def hardtanh(x: np.ndarray) -> np.ndarray:
    return np.clip(x, -1.0, 1.0)


def hardsigmoid(x: np.ndarray) -> np.ndarray:
    # piecewise (x+2)/4 on (-2, 2), equal to (hardtanh(x/2)+1)/2
    return np.clip((x + 2.0) / 4.0, 0.0, 1.0)


def normalize(x: Tensor, norm: Normalization) -> Tensor:
    """Apply the chosen activation elementwise (rowwise for softmax/pnorm)."""
    d = x.data
    if norm.kind == "softmax":
        return softmax(x)
    if norm.kind == "sigmoid":
        return Tensor(1.0 / (1.0 + np.exp(-d)))
    if norm.kind == "tanh":
        return Tensor(np.tanh(d))
    if norm.kind == "hardsigmoid":
        return Tensor(hardsigmoid(d))
    if norm.kind == "hardtanh":
        return Tensor(hardtanh(d))
    # pnorm: rowwise projection onto the unit p-sphere; unstable around zero
    rows = np.atleast_2d(d)
    norms = np.linalg.norm(rows, ord=norm.p, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DomainError("pnorm normalization of a zero row")
    return Tensor((rows / norms).reshape(x.shape))


def isbe_backward_seed(y: Tensor, targets: Tensor) -> Tensor:
    """The error injected verbatim at the raw-score node: y - targets."""
    if y.shape != targets.shape:
        raise ShapeError(f"soft scores {y.shape} vs targets {targets.shape}")
    return Tensor(y.data - targets.data)


def isbe_monitor_loss(y: Tensor, targets: Tensor) -> float:
    """Mean square error over soft scores, for curve logging only."""
    if y.shape != targets.shape:
        raise ShapeError(f"soft scores {y.shape} vs targets {targets.shape}")
    diff = y.data - targets.data
    return float((diff * diff).sum() / y.shape[0])


def lipschitz_probe(norm: Normalization, epsilon: float, p: float = 2.0,
                    trials: int = 1000, k: int = 10, seed: int = 0) -> float:
    """Empirical near-zero expansion constant: max ||F(x)-F(0)||_p / ||x||_p
    over random x with ||x||_p <= epsilon.

    Centered at F(0) so softmax's nonzero value at the origin does not
    dominate; pnorm has no limit at zero, so its center is taken as 0 (which
    is what makes its estimate blow up like 1/epsilon).
    """
    if epsilon <= 0 or trials < 1:
        raise ValueError("epsilon must be > 0 and trials >= 1")
    rng = np.random.default_rng(seed)
    if norm.kind == "pnorm":
        f0 = np.zeros(k)
    else:
        f0 = normalize(Tensor(np.zeros((1, k))), norm).data[0]
    worst = 0.0
    for _ in range(trials):
        direction = rng.standard_normal(k)
        direction /= np.linalg.norm(direction, ord=p)
        x = direction * epsilon * rng.uniform(0.01, 1.0)
        fx = normalize(Tensor(x[None, :]), norm).data[0]
        ratio = np.linalg.norm(fx - f0, ord=p) / np.linalg.norm(x, ord=p)
        worst = max(worst, float(ratio))
    return worst
