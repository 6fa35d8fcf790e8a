"""Numerical verification of the softmax gradient identity.

Three families of checks, all sampling-based (no symbolic proofs):

* the Jacobian of rowwise softmax has the form diag(y) - y y^T,
* the gradient of cross-entropy-over-softmax with respect to the raw scores
  equals softmax(x) - targets, with or without an additive relocation of the
  scores, verified both against an independently differentiated composed
  graph (tight tolerance) and against central finite differences,
* for non-softmax normalizations the same identity measurably fails.
"""

from dataclasses import dataclass

import numpy as np

from .autograd import Tape
from .errors import DomainError
from .loss import (ce_softmax_composed, cross_entropy_integrated,
                   cross_entropy_separated_oracle, softmax)
from .normalize import Normalization, normalize
from .tensor import Tensor

FD_STEP = 1e-5  # central-difference step for unit-scale float64 inputs


@dataclass
class JacobianReport:
    tag: str
    x: np.ndarray
    jacobian: np.ndarray
    max_deviation: float
    passed: bool


@dataclass
class TrickReport:
    max_err_closed: float
    max_err_fd: float
    passed: bool


@dataclass
class CounterexampleReport:
    tag: str
    trials_run: int
    skipped: int
    max_deviation: float
    min_deviation: float


def numeric_jacobian(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian J[i, j] ~ d f_i / d x_j for f: R^K -> R^K."""
    if h <= 0:
        raise ValueError("h must be > 0")
    x = np.asarray(x, dtype=np.float64)
    k = x.size
    jac = np.empty((k, k))
    for j in range(k):
        e = np.zeros(k)
        e[j] = h
        jac[:, j] = (f(x + e) - f(x - e)) / (2 * h)
    return jac


def _softmax_vec(x: np.ndarray) -> np.ndarray:
    return softmax(Tensor(x[None, :])).data[0]


def _normalize_vec(norm: Normalization, x: np.ndarray) -> np.ndarray:
    return normalize(Tensor(x[None, :]), norm).data[0]


def softmax_jacobian_closed(x: np.ndarray) -> np.ndarray:
    y = _softmax_vec(x)
    return np.diag(y) - np.outer(y, y)


def check_softmax_jacobian_form(x, h: float = FD_STEP,
                                tol: float = 1e-6) -> JacobianReport:
    x = np.asarray(x, dtype=np.float64)
    jac = numeric_jacobian(_softmax_vec, x, h)
    dev = float(np.abs(jac - softmax_jacobian_closed(x)).max())
    return JacobianReport("softmax", x, jac, dev, dev <= tol)


def _ce_scalar(x: np.ndarray, targets: np.ndarray) -> float:
    return cross_entropy_integrated(
        Tensor(x[None, :]), Tensor(targets[None, :]), "sum").item()


def _fd_gradient(f, x: np.ndarray, h: float) -> np.ndarray:
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _composed_gradient(x: np.ndarray, targets: np.ndarray) -> np.ndarray:
    tape = Tape()
    xid = tape.leaf(Tensor(x[None, :]))
    zid = ce_softmax_composed(tape, xid, Tensor(targets[None, :]), "sum")
    tape.backward(zid, Tensor(np.ones(tape.value(zid).shape)))
    return tape.grad(xid).data[0]


def check_trick_identity(x, targets, relocation=None, h: float = FD_STEP,
                         tol: float = 1e-6, tol_closed: float = 1e-12) -> TrickReport:
    """Gradient of CE(softmax(x + r), targets) wrt x vs softmax(x + r) - targets.

    The analytic side is the composed-graph autograd gradient (checked at
    tol_closed); the finite-difference side is checked at tol."""
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    r = np.zeros_like(x) if relocation is None else np.asarray(relocation, np.float64)
    closed = _softmax_vec(x + r) - targets
    err_closed = float(np.abs(_composed_gradient(x + r, targets) - closed).max())
    fd = _fd_gradient(lambda v: _ce_scalar(v + r, targets), x, h)
    err_fd = float(np.abs(fd - closed).max())
    return TrickReport(err_closed, err_fd,
                       err_closed <= tol_closed and err_fd <= tol)


def check_non_softmax_counterexample(norm: Normalization, trials: int = 100,
                                     k: int = 10, seed: int = 0,
                                     h: float = FD_STEP) -> CounterexampleReport:
    """How far grad CE(norm(x), targets) is from norm(x) - targets.

    For anything but softmax the deviation stays bounded away from zero;
    trials where a normalized score is non-positive (ln undefined) are
    counted and skipped."""
    rng = np.random.default_rng(seed)
    devs = []
    skipped = 0
    for _ in range(trials):
        x = rng.standard_normal(k)
        targets = np.full(k, 1e-6 / (k - 1))
        targets[rng.integers(k)] = 1 - 1e-6

        def ce_of_norm(v):
            y = _normalize_vec(norm, v)
            return float(cross_entropy_separated_oracle(
                Tensor(y[None, :]), Tensor(targets[None, :])).data[0])

        try:
            fd = _fd_gradient(ce_of_norm, x, h)
        except DomainError:
            skipped += 1
            continue
        devs.append(float(np.abs(fd - (_normalize_vec(norm, x) - targets)).max()))
    if not devs:
        return CounterexampleReport(norm.kind, 0, skipped, np.nan, np.nan)
    return CounterexampleReport(norm.kind, len(devs), skipped,
                                max(devs), min(devs))
