"""
Differentiable operations.

Each op is a ``Function`` subclass with a numpy ``forward`` and a
``backward`` returning one gradient per input (``None`` where an input
takes no gradient). The lowercase functions at the bottom of each section
are the public API used by the layers, losses and tests.
"""
import logging
import math

import numpy as np
from django.conf import settings
from numpy.lib.stride_tricks import sliding_window_view

from .counters import record_flops
from .exceptions import NonFiniteError, ShapeError, TensorError
from .tape import current_tape
from .tensor import Tensor, get_dtype

logger = logging.getLogger(__name__)


class Function:
    """Base class for differentiable operations"""

    name = 'op'

    def forward(self, *arrays, **kwargs):
        raise NotImplementedError("Forward pass not implemented for this function")

    def backward(self, grad):
        raise NotImplementedError("Backward pass not implemented for this function")

    @classmethod
    def apply(cls, *inputs, **kwargs):
        function = cls()
        arrays = [tensor.data if tensor is not None else None for tensor in inputs]
        out = function.forward(*arrays, **kwargs)

        if settings.TENSOR_CHECK_FINITE and not np.all(np.isfinite(out)):
            logger.error(f"Non-finite values produced by {cls.name} with output shape {out.shape}")
            raise NonFiniteError(f"{cls.name} produced NaN or Inf")

        result = Tensor.from_array(out)
        tape = current_tape()
        if tape is not None and any(t is not None and t.requires_grad for t in inputs):
            result.requires_grad = True
            tape.record(function, inputs, result)
        return result


def _as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor.from_array(np.asarray(value, dtype=get_dtype()))


def _check_broadcast(op, a_shape, b_shape):
    """Only the broadcasts the model needs: b expands into a's shape"""
    try:
        shape = np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        shape = None
    if shape != tuple(a_shape):
        raise ShapeError(f"{op}: shape {b_shape} cannot be broadcast onto {a_shape}")


def unbroadcast(grad, shape):
    """Sum a gradient back down to the shape of a broadcast operand"""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# Elementwise arithmetic

class Add(Function):
    name = 'add'

    def forward(self, a, b):
        _check_broadcast(self.name, a.shape, b.shape)
        self.b_shape = b.shape
        return a + b

    def backward(self, grad):
        return grad, unbroadcast(grad, self.b_shape)


class Sub(Function):
    name = 'sub'

    def forward(self, a, b):
        _check_broadcast(self.name, a.shape, b.shape)
        self.b_shape = b.shape
        return a - b

    def backward(self, grad):
        return grad, -unbroadcast(grad, self.b_shape)


class Mul(Function):
    name = 'mul'

    def forward(self, a, b):
        _check_broadcast(self.name, a.shape, b.shape)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, unbroadcast(grad * self.a, self.b.shape)


class Div(Function):
    name = 'div'

    def forward(self, a, b):
        _check_broadcast(self.name, a.shape, b.shape)
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        return grad / self.b, unbroadcast(-grad * self.a / (self.b * self.b), self.b.shape)


class Neg(Function):
    name = 'neg'

    def forward(self, x):
        return -x

    def backward(self, grad):
        return (-grad,)


class Log(Function):
    name = 'log'

    def forward(self, x):
        self.x = x
        return np.log(x)

    def backward(self, grad):
        return (grad / self.x,)


class Clip(Function):
    name = 'clip'

    def forward(self, x, low=None, high=None):
        self.mask = np.ones_like(x, dtype=bool)
        if low is not None:
            self.mask &= x >= low
        if high is not None:
            self.mask &= x <= high
        return np.clip(x, low, high)

    def backward(self, grad):
        return (grad * self.mask,)


def add(a, b):
    return Add.apply(_as_tensor(a), _as_tensor(b))


def sub(a, b):
    return Sub.apply(_as_tensor(a), _as_tensor(b))


def mul(a, b):
    return Mul.apply(_as_tensor(a), _as_tensor(b))


def div(a, b):
    return Div.apply(_as_tensor(a), _as_tensor(b))


def neg(x):
    return Neg.apply(_as_tensor(x))


def log(x):
    return Log.apply(_as_tensor(x))


def clip(x, low=None, high=None):
    return Clip.apply(_as_tensor(x), low=low, high=high)


# Matrix products

class MatMul(Function):
    name = 'matmul'

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
        if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
            raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        out = np.matmul(a, b)
        record_flops(self.name, 2 * out.size * a.shape[-1])
        return out

    def backward(self, grad):
        a, b = self.a, self.b
        grad_a = np.matmul(grad, np.swapaxes(b, -1, -2))
        if b.ndim == 2 and a.ndim > 2:
            k, n = b.shape
            grad_b = a.reshape(-1, k).T @ grad.reshape(-1, n)
        else:
            grad_b = np.matmul(np.swapaxes(a, -1, -2), grad)
        return grad_a, grad_b


def matmul(a, b):
    return MatMul.apply(_as_tensor(a), _as_tensor(b))


# Activations

class ReLU(Function):
    name = 'relu'

    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype)

    def backward(self, grad):
        return (grad * self.mask,)


class LeakyReLU(Function):
    name = 'leaky_relu'

    def forward(self, x, slope=0.01):
        self.scale = np.where(x > 0, 1.0, slope).astype(x.dtype)
        return x * self.scale

    def backward(self, grad):
        return (grad * self.scale,)


class GELU(Function):
    """Tanh approximation of the Gaussian error linear unit"""

    name = 'gelu'
    coeff = math.sqrt(2.0 / math.pi)

    def forward(self, x):
        self.x = x
        self.t = np.tanh(self.coeff * (x + 0.044715 * x ** 3))
        return 0.5 * x * (1.0 + self.t)

    def backward(self, grad):
        x, t = self.x, self.t
        du = self.coeff * (1.0 + 3 * 0.044715 * x * x)
        return (grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)


class Sigmoid(Function):
    name = 'sigmoid'

    def forward(self, x):
        e = np.exp(-np.abs(x))
        y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
        # keep the open interval (0, 1) even where the float saturates
        zero, one = np.zeros((), dtype=x.dtype), np.ones((), dtype=x.dtype)
        y = np.clip(y, np.nextafter(zero, one), np.nextafter(one, zero))
        self.y = y
        return y

    def backward(self, grad):
        return (grad * self.y * (1.0 - self.y),)


class Softmax(Function):
    name = 'softmax'

    def forward(self, x, axis=-1):
        self.axis = axis
        shifted = np.exp(x - x.max(axis=axis, keepdims=True))
        self.y = shifted / shifted.sum(axis=axis, keepdims=True)
        return self.y

    def backward(self, grad):
        y = self.y
        return (y * (grad - (grad * y).sum(axis=self.axis, keepdims=True)),)


def relu(x):
    return ReLU.apply(_as_tensor(x))


def leaky_relu(x, slope=0.01):
    return LeakyReLU.apply(_as_tensor(x), slope=slope)


def gelu(x):
    return GELU.apply(_as_tensor(x))


def sigmoid(x):
    return Sigmoid.apply(_as_tensor(x))


def softmax(x, axis=-1):
    x = _as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {x.shape}")
    return Softmax.apply(x, axis=axis)


ACTIVATIONS = {
    'relu': relu,
    'leaky_relu': leaky_relu,
    'gelu': gelu,
}


# Reductions and movement

class Sum(Function):
    name = 'sum'

    def forward(self, x, axis=None, keepdims=False):
        self.shape = x.shape
        self.axis = axis
        self.keepdims = keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Reshape(Function):
    name = 'reshape'

    def forward(self, x, shape=None):
        self.shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"Cannot reshape {x.shape} into {shape}") from exc

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    name = 'transpose'

    def forward(self, x, axes=None):
        self.axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
        return np.ascontiguousarray(x.transpose(self.axes))

    def backward(self, grad):
        return (grad.transpose(np.argsort(self.axes)),)


class Concat(Function):
    name = 'concat'

    def forward(self, *arrays, axis=0):
        reference = arrays[0].shape
        for array in arrays[1:]:
            if array.ndim != len(reference) or any(
                d1 != d2 for i, (d1, d2) in enumerate(zip(array.shape, reference)) if i != axis % len(reference)
            ):
                raise ShapeError(f"concat: shapes {reference} and {array.shape} differ off axis {axis}")
        self.axis = axis
        self.splits = np.cumsum([array.shape[axis] for array in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


class Pad2d(Function):
    name = 'pad2d'

    def forward(self, x, pads=(0, 0, 0, 0)):
        top, bottom, left, right = pads
        self.crop = (top, top + x.shape[-2], left, left + x.shape[-1])
        widths = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
        return np.pad(x, widths)

    def backward(self, grad):
        r0, r1, c0, c1 = self.crop
        return (grad[..., r0:r1, c0:c1],)


def reduce_sum(x, axis=None, keepdims=False):
    return Sum.apply(_as_tensor(x), axis=axis, keepdims=keepdims)


def reduce_mean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x, shape):
    return Reshape.apply(_as_tensor(x), shape=tuple(shape))


def transpose(x, axes=None):
    return Transpose.apply(_as_tensor(x), axes=axes)


def concat(tensors, axis=0):
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    return Concat.apply(*[_as_tensor(t) for t in tensors], axis=axis)


def concat_channels(tensors):
    """Channel-axis concatenation of [B, Ci, H, W] maps in argument order"""
    for t in tensors:
        if t.ndim != 4:
            raise ShapeError(f"concat_channels expects [B, C, H, W] maps, got {t.shape}")
    return concat(tensors, axis=1)


def pad2d(x, pads):
    return Pad2d.apply(_as_tensor(x), pads=tuple(int(p) for p in pads))


# Convolution

def _pair(value):
    if isinstance(value, (tuple, list)):
        return int(value[0]), int(value[1])
    return int(value), int(value)


def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


class Conv2d(Function):
    """Cross-correlation (no kernel flip) over [B, Cin, H, W] via strided windows"""

    name = 'conv2d'

    def forward(self, x, w, bias=None, stride=1, padding=0, groups=1):
        if x.ndim != 4 or w.ndim != 4:
            raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
        batch, in_channels, height, width = x.shape
        out_channels, group_channels, kh, kw = w.shape
        if groups < 1 or in_channels % groups or out_channels % groups:
            raise ShapeError(f"conv2d: channels {in_channels}->{out_channels} not divisible by groups={groups}")
        if group_channels != in_channels // groups:
            raise ShapeError(f"conv2d: weight expects {group_channels * groups} input channels, got {in_channels}")
        if bias is not None and bias.shape != (out_channels,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {out_channels} output channels")

        sh, sw = _pair(stride)
        ph, pw = _pair(padding)
        out_h = conv_output_size(height, kh, sh, ph)
        out_w = conv_output_size(width, kw, sw, pw)
        if out_h < 1 or out_w < 1:
            raise ShapeError(
                f"conv2d: kernel {kh}x{kw} with padding {padding} does not fit a {height}x{width} input"
            )

        padded = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        cols = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :out_h, :out_w]

        if groups == 1:
            out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        else:
            grouped = cols.reshape(batch, groups, group_channels, out_h, out_w, kh, kw)
            kernels = w.reshape(groups, out_channels // groups, group_channels, kh, kw)
            out = np.einsum('bgchwij,gocij->bgohw', grouped, kernels, optimize=True)
            out = out.reshape(batch, out_channels, out_h, out_w)
        if bias is not None:
            out = out + bias.reshape(1, -1, 1, 1)

        self.cols, self.w, self.has_bias = cols, w, bias is not None
        self.padded_shape, self.input_shape = padded.shape, x.shape
        self.stride, self.padding, self.groups = (sh, sw), (ph, pw), groups
        record_flops(self.name, 2 * batch * out_channels * out_h * out_w * group_channels * kh * kw)
        return np.ascontiguousarray(out, dtype=x.dtype)

    def backward(self, grad):
        cols, w, groups = self.cols, self.w, self.groups
        batch, in_channels, out_h, out_w, kh, kw = cols.shape
        out_channels, group_channels = w.shape[:2]
        sh, sw = self.stride
        ph, pw = self.padding

        if groups == 1:
            grad_w = np.tensordot(grad, cols, axes=([0, 2, 3], [0, 2, 3]))
            grad_cols = np.tensordot(grad, w, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        else:
            grad_g = grad.reshape(batch, groups, out_channels // groups, out_h, out_w)
            grouped = cols.reshape(batch, groups, group_channels, out_h, out_w, kh, kw)
            kernels = w.reshape(groups, out_channels // groups, group_channels, kh, kw)
            grad_w = np.einsum('bgohw,bgchwij->gocij', grad_g, grouped, optimize=True).reshape(w.shape)
            grad_cols = np.einsum('bgohw,gocij->bgchwij', grad_g, kernels, optimize=True)
            grad_cols = grad_cols.reshape(batch, in_channels, out_h, out_w, kh, kw)

        grad_padded = np.zeros(self.padded_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                grad_padded[:, :, i:i + sh * (out_h - 1) + 1:sh, j:j + sw * (out_w - 1) + 1:sw] += grad_cols[..., i, j]
        height, width = self.input_shape[2:]
        grad_x = grad_padded[:, :, ph:ph + height, pw:pw + width]
        grad_bias = grad.sum(axis=(0, 2, 3)) if self.has_bias else None
        return grad_x, grad_w, grad_bias


def conv2d(x, w, bias=None, stride=1, padding=0, groups=1):
    return Conv2d.apply(_as_tensor(x), _as_tensor(w), bias, stride=stride, padding=padding, groups=groups)


# Normalization

class LayerNorm(Function):
    """Normalization over the last axis"""

    name = 'layer_norm'

    def forward(self, x, gamma, beta, eps=1e-5):
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = (x - mean) * self.inv_std
        self.gamma = gamma
        return self.xhat * gamma + beta

    def backward(self, grad):
        xhat, inv_std = self.xhat, self.inv_std
        n = xhat.shape[-1]
        dxhat = grad * self.gamma
        grad_x = inv_std / n * (
            n * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        lead = tuple(range(grad.ndim - 1))
        return grad_x, (grad * xhat).sum(axis=lead), grad.sum(axis=lead)


class BatchNorm2d(Function):
    """Per-channel normalization over (batch, height, width)"""

    name = 'batch_norm2d'
    axes = (0, 2, 3)

    def forward(self, x, gamma, beta, running_mean=None, running_var=None, eps=1e-5, momentum=0.1, training=True):
        shape = (1, -1, 1, 1)
        if training:
            mean = x.mean(axis=self.axes)
            var = x.var(axis=self.axes)
            count = x.size // x.shape[1]
            if running_mean is not None:
                running_mean *= 1 - momentum
                running_mean += momentum * mean
            if running_var is not None:
                unbiased = var * count / (count - 1) if count > 1 else var
                running_var *= 1 - momentum
                running_var += momentum * unbiased
        else:
            mean, var = running_mean, running_var
        self.training = training
        self.inv_std = (1.0 / np.sqrt(var + eps)).reshape(shape)
        self.xhat = (x - mean.reshape(shape)) * self.inv_std
        self.gamma = gamma.reshape(shape)
        return (self.xhat * self.gamma + beta.reshape(shape)).astype(x.dtype)

    def backward(self, grad):
        xhat, inv_std = self.xhat, self.inv_std
        dxhat = grad * self.gamma
        if self.training:
            n = grad.size // grad.shape[1]
            grad_x = inv_std / n * (
                n * dxhat
                - dxhat.sum(axis=self.axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=self.axes, keepdims=True)
            )
        else:
            grad_x = dxhat * inv_std
        return grad_x, (grad * xhat).sum(axis=self.axes), grad.sum(axis=self.axes)


def layer_norm(x, gamma, beta, eps=1e-5):
    if eps <= 0:
        raise TensorError(f"layer_norm eps must be positive, got {eps}")
    x = _as_tensor(x)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match last axis of {x.shape}")
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def batch_norm2d(x, gamma, beta, running_mean=None, running_var=None, eps=1e-5, momentum=0.1, training=True):
    """
    Batch normalization of a [B, C, H, W] map.

    ``running_mean`` / ``running_var`` are numpy arrays updated in place,
    and only when ``training`` is set; eval mode normalizes with them.
    """
    if eps <= 0:
        raise TensorError(f"batch_norm2d eps must be positive, got {eps}")
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"batch_norm2d expects [B, C, H, W], got {x.shape}")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"batch_norm2d affine shapes {gamma.shape}/{beta.shape} do not match {channels} channels")
    if not training and (running_mean is None or running_var is None):
        raise TensorError("batch_norm2d in eval mode needs running statistics")
    return BatchNorm2d.apply(
        x, gamma, beta,
        running_mean=running_mean, running_var=running_var,
        eps=eps, momentum=momentum, training=training,
    )


# Pooling and resampling

class GlobalAvgPool(Function):
    name = 'global_avg_pool'

    def forward(self, x):
        self.shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        _, _, height, width = self.shape
        spread = grad[:, :, None, None] / (height * width)
        return (np.broadcast_to(spread, self.shape).copy(),)


def bilinear_weights(in_size, out_size, dtype=np.float64):
    """
    Interpolation matrix [out_size, in_size] of 1-D linear resampling with
    the align-corners=false convention (half-pixel centres, edge clamp).
    """
    weights = np.zeros((out_size, in_size), dtype=dtype)
    scale = in_size / out_size
    for dst in range(out_size):
        src = max((dst + 0.5) * scale - 0.5, 0.0)
        lo = min(int(math.floor(src)), in_size - 1)
        hi = min(lo + 1, in_size - 1)
        frac = src - lo
        weights[dst, lo] += 1.0 - frac
        weights[dst, hi] += frac
    return weights


class Resample(Function):
    """Separable linear map out = Wh @ x @ Ww^T on the last two axes"""

    name = 'resample'

    def forward(self, x, rows=None, cols=None):
        self.rows, self.cols = rows.astype(x.dtype), cols.astype(x.dtype)
        return np.matmul(np.matmul(self.rows, x), self.cols.T)

    def backward(self, grad):
        return (np.matmul(np.matmul(self.rows.T, grad), self.cols),)


class AvgPool(Function):
    name = 'avg_pool'

    def forward(self, x, factor=2):
        batch, channels, height, width = x.shape
        self.factor = factor
        blocks = x.reshape(batch, channels, height // factor, factor, width // factor, factor)
        return blocks.mean(axis=(3, 5))

    def backward(self, grad):
        f = self.factor
        return (np.repeat(np.repeat(grad, f, axis=2), f, axis=3) / (f * f),)


def global_avg_pool(x):
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects [B, C, H, W], got {x.shape}")
    return GlobalAvgPool.apply(x)


def upsample_bilinear(x, factor):
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample_bilinear expects [B, C, H, W], got {x.shape}")
    if factor < 1 or factor & (factor - 1):
        raise ShapeError(f"Resampling factor must be a power of two, got {factor}")
    height, width = x.shape[2:]
    rows = bilinear_weights(height, height * factor)
    cols = bilinear_weights(width, width * factor)
    return Resample.apply(x, rows=rows, cols=cols)


def upsample_bilinear_2x(x):
    return upsample_bilinear(x, 2)


def downsample(x, factor):
    """Average pooling with kernel = stride = ``factor``"""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"downsample expects [B, C, H, W], got {x.shape}")
    if factor < 1 or factor & (factor - 1):
        raise ShapeError(f"Resampling factor must be a power of two, got {factor}")
    if x.shape[2] % factor or x.shape[3] % factor:
        raise ShapeError(f"downsample: {x.shape[2]}x{x.shape[3]} map not divisible by {factor}")
    return AvgPool.apply(x, factor=factor)
