"""
Decoder and skip-path building blocks.

Every block keeps the spatial size of its input; only channel counts
change.
"""
import logging

from apps.tensors import ops
from apps.tensors.exceptions import ShapeError

from .exceptions import ConfigError
from .layers import BatchNorm2d, Conv2d
from .modules import Module, he_uniform

logger = logging.getLogger(__name__)


def _check_channels(block, x, channels):
    if x.ndim != 4 or x.shape[1] != channels:
        raise ShapeError(f"{block} expects [B, {channels}, H, W] input, got {x.shape}")


class SEBlock(Module):
    """
    Squeeze-and-excitation channel gate.

    z = global average of u, s = sigmoid(relu(z W1) W2), out_c = s_c * u_c.
    """

    def __init__(self, rng, channels, reduction=8):
        super().__init__()
        if not 1 <= reduction <= channels:
            raise ConfigError(f"SE reduction must be in [1, {channels}] for {channels} channels, got {reduction}")
        self.channels = channels
        self.hidden = channels // reduction
        self.w1 = he_uniform(rng, (channels, self.hidden), channels)
        self.w2 = he_uniform(rng, (self.hidden, channels), self.hidden)

    def gates(self, u):
        z = ops.global_avg_pool(u)
        return ops.sigmoid(ops.matmul(ops.relu(ops.matmul(z, self.w1)), self.w2))

    def forward(self, u):
        _check_channels('SEBlock', u, self.channels)
        batch, channels = u.shape[:2]
        s = self.gates(u)
        return ops.mul(u, ops.reshape(s, (batch, channels, 1, 1)))


class ResidualSEBlock(Module):
    """
    1x1 reduction, conv-BN-ReLU, conv-BN, SE gate, shortcut add, ReLU.

    The shortcut is the block input itself, projected by a 1x1 conv + BN
    only when the channel counts differ.
    """

    def __init__(self, rng, in_channels, out_channels, se_reduction=8, eps=1e-5, momentum=0.1):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.reduce = Conv2d(rng, in_channels, out_channels, kernel_size=1)
        self.conv_a = Conv2d(rng, out_channels, out_channels, kernel_size=3, padding=1, bias=False)
        self.bn_a = BatchNorm2d(out_channels, eps, momentum)
        self.conv_b = Conv2d(rng, out_channels, out_channels, kernel_size=3, padding=1, bias=False)
        self.bn_b = BatchNorm2d(out_channels, eps, momentum)
        self.se = SEBlock(rng, out_channels, se_reduction)
        if in_channels != out_channels:
            self.shortcut_conv = Conv2d(rng, in_channels, out_channels, kernel_size=1, bias=False)
            self.shortcut_bn = BatchNorm2d(out_channels, eps, momentum)
        else:
            self.shortcut_conv = None

    def branch(self, x):
        h = self.reduce(x)
        h = ops.relu(self.bn_a(self.conv_a(h)))
        h = self.bn_b(self.conv_b(h))
        return self.se(h)

    def shortcut(self, x):
        if self.shortcut_conv is None:
            return x
        return self.shortcut_bn(self.shortcut_conv(x))

    def forward(self, x):
        _check_channels('ResidualSEBlock', x, self.in_channels)
        return ops.relu(ops.add(self.branch(x), self.shortcut(x)))


class AdapterBlock(Module):
    """
    Two bottleneck pathways summed:
    out = up(f(down(h))) + par_up(f(par_down(h))).

    With ``shared`` the parallel pathway reuses the main weights, so the
    output is twice the main pathway.
    """

    def __init__(self, rng, in_channels, out_channels, reduction=2, activation='relu', shared=False):
        super().__init__()
        if activation not in ops.ACTIVATIONS:
            raise ConfigError(f"Unknown adapter activation '{activation}'")
        bottleneck = in_channels // reduction
        if not 1 <= bottleneck < in_channels:
            raise ConfigError(
                f"Adapter bottleneck {bottleneck} must be in [1, {in_channels}) for reduction {reduction}"
            )
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.bottleneck = bottleneck
        self.activation = activation
        self.shared = shared
        self.down = Conv2d(rng, in_channels, bottleneck, kernel_size=1, bias=False)
        self.up = Conv2d(rng, bottleneck, out_channels, kernel_size=1, bias=False)
        if shared:
            self.par_down, self.par_up = None, None
        else:
            self.par_down = Conv2d(rng, in_channels, bottleneck, kernel_size=1, bias=False)
            self.par_up = Conv2d(rng, bottleneck, out_channels, kernel_size=1, bias=False)

    def pathway(self, h, down, up):
        return up(ops.ACTIVATIONS[self.activation](down(h)))

    def forward(self, h):
        _check_channels('AdapterBlock', h, self.in_channels)
        main = self.pathway(h, self.down, self.up)
        if self.shared:
            parallel = self.pathway(h, self.down, self.up)
        else:
            parallel = self.pathway(h, self.par_down, self.par_up)
        return ops.add(main, parallel)


class CBRBlock(Module):
    """1x1 conv, batch-norm, ReLU"""

    def __init__(self, rng, in_channels, out_channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.in_channels = in_channels
        self.conv = Conv2d(rng, in_channels, out_channels, kernel_size=1)
        self.bn = BatchNorm2d(out_channels, eps, momentum)

    def forward(self, x):
        _check_channels('CBRBlock', x, self.in_channels)
        return ops.relu(self.bn(self.conv(x)))


class DoubleConvBlock(Module):
    """
    Plain decoder block of the baselines: the same 1x1 width reduction as
    the residual block, then two 3x3 conv-BN-ReLU layers.
    """

    def __init__(self, rng, in_channels, out_channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.in_channels = in_channels
        self.reduce = Conv2d(rng, in_channels, out_channels, kernel_size=1)
        self.conv_a = Conv2d(rng, out_channels, out_channels, kernel_size=3, padding=1, bias=False)
        self.bn_a = BatchNorm2d(out_channels, eps, momentum)
        self.conv_b = Conv2d(rng, out_channels, out_channels, kernel_size=3, padding=1, bias=False)
        self.bn_b = BatchNorm2d(out_channels, eps, momentum)

    def forward(self, x):
        _check_channels('DoubleConvBlock', x, self.in_channels)
        h = ops.relu(self.bn_a(self.conv_a(self.reduce(x))))
        return ops.relu(self.bn_b(self.conv_b(h)))
