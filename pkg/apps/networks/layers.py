"""
Parameterized primitive layers.

Weights are He-uniform, bound sqrt(6 / fan_in), drawn from the rng the
caller passes in; biases start at zero and norm affines at ones/zeros.
"""
import numpy as np

from apps.tensors import ops

from .modules import Module, he_uniform, ones_param, zeros_param


class Conv2d(Module):
    def __init__(self, rng, in_channels, out_channels, kernel_size=1, stride=1, padding=0, groups=1, bias=True):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.groups = groups
        fan_in = (in_channels // groups) * kernel_size * kernel_size
        self.weight = he_uniform(rng, (out_channels, in_channels // groups, kernel_size, kernel_size), fan_in)
        self.bias = zeros_param((out_channels,)) if bias else None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding, groups=self.groups)


class Linear(Module):
    """Token projection [..., in] -> [..., out]"""

    def __init__(self, rng, in_features, out_features, bias=True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = he_uniform(rng, (in_features, out_features), in_features)
        self.bias = zeros_param((out_features,)) if bias else None

    def forward(self, x):
        out = ops.matmul(x, self.weight)
        if self.bias is not None:
            out = ops.add(out, self.bias)
        return out

    def zero_(self):
        self.weight.data[...] = 0
        if self.bias is not None:
            self.bias.data[...] = 0


class BatchNorm2d(Module):
    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.weight = ones_param((channels,))
        self.bias = zeros_param((channels,))
        self.register_buffer('running_mean', np.zeros(channels))
        self.register_buffer('running_var', np.ones(channels))

    def forward(self, x):
        return ops.batch_norm2d(
            x, self.weight, self.bias,
            running_mean=self.running_mean, running_var=self.running_var,
            eps=self.eps, momentum=self.momentum, training=self.training,
        )


class LayerNorm(Module):
    def __init__(self, features, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.weight = ones_param((features,))
        self.bias = zeros_param((features,))

    def forward(self, x):
        return ops.layer_norm(x, self.weight, self.bias, eps=self.eps)
