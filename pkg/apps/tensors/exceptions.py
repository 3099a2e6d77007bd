from django.core.exceptions import ValidationError


class TensorError(ValidationError):
    """Base class for tensor engine contract violations"""


class ShapeError(TensorError):
    """Operand shapes are incompatible with the requested operation"""


class NonFiniteError(TensorError):
    """An operation produced NaN or Inf from its inputs"""


class TapeError(TensorError):
    """Backward was requested on something the tape cannot differentiate"""


class PrecisionError(TensorError):
    """Unknown run-level float precision"""
