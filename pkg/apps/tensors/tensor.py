"""
Dense tensor type used by every layer, loss and optimizer in the project.

A Tensor owns a numpy array (row-major), an optional gradient of the same
shape, and a handle into the GradTape that produced it. Precision is a
run-level switch read from ``settings.TENSOR_PRECISION`` and can be
overridden per thread with the ``precision`` context manager.
"""
import threading
from contextlib import contextmanager

import numpy as np
from django.conf import settings

from .exceptions import PrecisionError, ShapeError

PRECISIONS = {
    'float32': np.float32,
    'float64': np.float64,
}

_local = threading.local()


def get_precision():
    """Name of the float precision active on this thread"""
    name = getattr(_local, 'precision', None) or settings.TENSOR_PRECISION
    if name not in PRECISIONS:
        raise PrecisionError(f"Unsupported precision '{name}', expected one of {sorted(PRECISIONS)}")
    return name


def get_dtype():
    return PRECISIONS[get_precision()]


@contextmanager
def precision(name):
    """Temporarily switch the float precision of the current thread"""
    if name not in PRECISIONS:
        raise PrecisionError(f"Unsupported precision '{name}', expected one of {sorted(PRECISIONS)}")
    previous = getattr(_local, 'precision', None)
    _local.precision = name
    try:
        yield PRECISIONS[name]
    finally:
        _local.precision = previous


class Tensor:
    """
    Rank-N float array with an optional gradient slot.

    Args:
        data: anything numpy can turn into an array; always copied
        requires_grad: whether backward should materialize ``grad`` for this tensor
        dtype: explicit numpy float dtype, defaults to the active precision
    """

    def __init__(self, data, requires_grad=False, dtype=None):
        array = np.array(data, dtype=dtype or get_dtype(), copy=True)
        if any(dim < 1 for dim in array.shape):
            raise ShapeError(f"Tensor dimensions must be positive, got {array.shape}")
        self.data = array
        self.requires_grad = requires_grad
        self.grad = None
        self.node_id = None
        self._tape = None

    @classmethod
    def from_array(cls, array, requires_grad=False):
        """Wrap an op result without copying it"""
        tensor = cls.__new__(cls)
        tensor.data = array
        tensor.requires_grad = requires_grad
        tensor.grad = None
        tensor.node_id = None
        tensor._tape = None
        return tensor

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data.copy()

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def accumulate_grad(self, grad):
        if grad.shape != self.data.shape:
            raise ShapeError(f"Gradient shape {grad.shape} does not match tensor shape {self.shape}")
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor.from_array(self.data.copy())

    # Operator sugar, all routed through apps.tensors.ops

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.add(ops.neg(self), other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes)

    def __repr__(self):
        grad_flag = ', requires_grad=True' if self.requires_grad else ''
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad_flag})"


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad=False):
    return Tensor(np.ones(shape), requires_grad=requires_grad)
