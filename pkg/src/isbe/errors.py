"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """Input values are outside the mathematical domain of the operation."""


class IdxFormatError(ValueError):
    """An IDX file has a bad magic number or a truncated payload."""


class MeasurementError(RuntimeError):
    """A timing measurement cannot be formed (e.g. zero total time)."""


class NumericError(RuntimeError):
    """A run produced NaN/Inf losses or gradients."""
