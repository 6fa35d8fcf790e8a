"""Digit-classifier training engine built on a small tape-based autodiff
core, with two interchangeable loss branches: the integrated
cross-entropy-over-softmax loss, and direct soft-error injection at the
raw-score node (normalize forward, seed backward with normalized-minus-
target, no loss evaluation)."""

from .tensor import ConvSpec, Tensor
from .autograd import Tape
from .normalize import Normalization

__all__ = ["ConvSpec", "Tensor", "Tape", "Normalization"]
__version__ = "0.1.0"
