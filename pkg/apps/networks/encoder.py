"""
Three-stage pyramid vision transformer encoder.

Each stage embeds overlapping patches with a strided convolution, runs
pre-norm transformer blocks whose attention reads keys and values from a
spatially reduced copy of the tokens, and folds the tokens back into a
[B, C, h, w] map. Stage strides 4, 2, 2 give maps at 1/4, 1/8 and 1/16 of
the input resolution.
"""
import logging
import math
from typing import NamedTuple

from apps.tensors import ops
from apps.tensors.exceptions import ShapeError

from .layers import Conv2d, LayerNorm, Linear
from .modules import Module, ModuleList

logger = logging.getLogger(__name__)


class FeaturePyramid(NamedTuple):
    f1: object
    f2: object
    f3: object


def tokens_to_map(tokens, height, width):
    batch, _, channels = tokens.shape
    return ops.reshape(ops.transpose(tokens, (0, 2, 1)), (batch, channels, height, width))


def map_to_tokens(x):
    batch, channels, height, width = x.shape
    return ops.transpose(ops.reshape(x, (batch, channels, height * width)), (0, 2, 1))


class OverlapPatchEmbed(Module):
    """Conv with kernel 2s-1, padding s-1, stride s, then layer-norm over channels"""

    def __init__(self, rng, in_channels, out_channels, stride, eps=1e-5):
        super().__init__()
        self.stride = stride
        self.proj = Conv2d(rng, in_channels, out_channels, kernel_size=2 * stride - 1, stride=stride, padding=stride - 1)
        self.norm = LayerNorm(out_channels, eps)

    def forward(self, x):
        height, width = x.shape[2:]
        if height % self.stride or width % self.stride:
            raise ShapeError(f"Patch embedding stride {self.stride} does not divide a {height}x{width} input")
        x = self.proj(x)
        height, width = x.shape[2:]
        return self.norm(map_to_tokens(x)), height, width


class SpatialReductionAttention(Module):
    """
    Multi-head attention with full-resolution queries and keys/values taken
    from the token map reduced by a conv of kernel = stride = ``sr_ratio``.
    """

    def __init__(self, rng, dim, num_heads, sr_ratio=1, eps=1e-5):
        super().__init__()
        if dim % num_heads:
            raise ShapeError(f"Attention width {dim} is not divisible by {num_heads} heads")
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5
        self.sr_ratio = sr_ratio
        self.q = Linear(rng, dim, dim)
        self.k = Linear(rng, dim, dim)
        self.v = Linear(rng, dim, dim)
        self.proj = Linear(rng, dim, dim)
        if sr_ratio > 1:
            self.sr = Conv2d(rng, dim, dim, kernel_size=sr_ratio, stride=sr_ratio)
            self.sr_norm = LayerNorm(dim, eps)
        else:
            self.sr = None

    def split_heads(self, x):
        batch, length, _ = x.shape
        x = ops.reshape(x, (batch, length, self.num_heads, self.head_dim))
        return ops.transpose(x, (0, 2, 1, 3))

    def reduce(self, x, height, width):
        if self.sr is None:
            return x
        r = self.sr_ratio
        pad_h = math.ceil(height / r) * r - height
        pad_w = math.ceil(width / r) * r - width
        x = tokens_to_map(x, height, width)
        if pad_h or pad_w:
            x = ops.pad2d(x, (0, pad_h, 0, pad_w))
        return self.sr_norm(map_to_tokens(self.sr(x)))

    def attend(self, x, height, width):
        """Return the projected output and the [B, heads, N, M] attention weights"""
        batch, length, channels = x.shape
        if length != height * width:
            raise ShapeError(f"Token count {length} does not match a {height}x{width} map")
        if channels != self.dim:
            raise ShapeError(f"Attention expects width {self.dim}, got {channels}")

        source = self.reduce(x, height, width)
        q = self.split_heads(self.q(x))
        k = self.split_heads(self.k(source))
        v = self.split_heads(self.v(source))

        scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), self.scale)
        weights = ops.softmax(scores, axis=-1)
        out = ops.transpose(ops.matmul(weights, v), (0, 2, 1, 3))
        out = ops.reshape(out, (batch, length, channels))
        return self.proj(out), weights

    def forward(self, x, height, width):
        out, _ = self.attend(x, height, width)
        return out


class ConvFFN(Module):
    """Linear, depthwise 3x3 conv, GELU, linear"""

    def __init__(self, rng, dim, hidden):
        super().__init__()
        self.fc1 = Linear(rng, dim, hidden)
        self.dwconv = Conv2d(rng, hidden, hidden, kernel_size=3, padding=1, groups=hidden)
        self.fc2 = Linear(rng, hidden, dim)

    def forward(self, x, height, width):
        h = tokens_to_map(self.fc1(x), height, width)
        h = map_to_tokens(self.dwconv(h))
        return self.fc2(ops.gelu(h))


class TransformerBlock(Module):
    """x + SRA(LN(x)), then x + ConvFFN(LN(x))"""

    def __init__(self, rng, dim, num_heads, sr_ratio, mlp_ratio=4, eps=1e-5, zero_init_residual=False):
        super().__init__()
        self.norm1 = LayerNorm(dim, eps)
        self.attn = SpatialReductionAttention(rng, dim, num_heads, sr_ratio, eps)
        self.norm2 = LayerNorm(dim, eps)
        self.ffn = ConvFFN(rng, dim, dim * mlp_ratio)
        if zero_init_residual:
            self.attn.proj.zero_()
            self.ffn.fc2.zero_()

    def forward(self, x, height, width):
        x = ops.add(x, self.attn(self.norm1(x), height, width))
        return ops.add(x, self.ffn(self.norm2(x), height, width))


class EncoderStage(Module):
    def __init__(self, rng, in_channels, channels, stride, depth, num_heads, sr_ratio, mlp_ratio, eps, zero_init_residual):
        super().__init__()
        self.embed = OverlapPatchEmbed(rng, in_channels, channels, stride, eps)
        self.blocks = ModuleList(
            TransformerBlock(rng, channels, num_heads, sr_ratio, mlp_ratio, eps, zero_init_residual)
            for _ in range(depth)
        )

    def forward(self, x):
        tokens, height, width = self.embed(x)
        for block in self.blocks:
            tokens = block(tokens, height, width)
        return tokens_to_map(tokens, height, width)


class PVTEncoder(Module):
    def __init__(self, rng, config):
        super().__init__()
        self.config = config.validate()
        self.stages = ModuleList()
        in_channels = config.in_channels
        for i, channels in enumerate(config.stage_channels):
            self.stages.append(EncoderStage(
                rng, in_channels, channels,
                stride=config.patch_strides[i],
                depth=config.stage_depths[i],
                num_heads=config.num_heads[i],
                sr_ratio=config.sr_ratios[i],
                mlp_ratio=config.mlp_ratio,
                eps=config.norm_eps,
                zero_init_residual=config.zero_init_residual,
            ))
            in_channels = channels

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"Encoder expects [B, {self.config.in_channels}, H, W], got {x.shape}")
        stride = self.config.total_stride
        if x.shape[2] % stride or x.shape[3] % stride:
            raise ShapeError(f"Input {x.shape[2]}x{x.shape[3]} is not divisible by {stride}")
        maps = []
        for stage in self.stages:
            x = stage(x)
            maps.append(x)
        return FeaturePyramid(*maps)


class DownsampleSumFusion(Module):
    """
    g2 = f2 + proj12(down2(f1)), g3 = f3 + proj23(down2(g2)).

    f1 passes through unchanged as the finest skip.
    """

    def __init__(self, rng, stage_channels):
        super().__init__()
        c1, c2, c3 = stage_channels
        self.proj12 = Conv2d(rng, c1, c2, kernel_size=1)
        self.proj23 = Conv2d(rng, c2, c3, kernel_size=1)

    def forward(self, pyramid):
        g2 = ops.add(pyramid.f2, self.proj12(ops.downsample(pyramid.f1, 2)))
        g3 = ops.add(pyramid.f3, self.proj23(ops.downsample(g2, 2)))
        return FeaturePyramid(pyramid.f1, g2, g3)
