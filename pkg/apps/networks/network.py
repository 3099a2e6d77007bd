"""
Segmentation network assembly for the four ablation variants.

    base      encoder, CBR skips, plain double-conv decoder
    dsenc     + downsample-and-sum fusion of the pyramid
    dsencres  + residual SE decoder blocks
    full      + adapter skips instead of CBR
"""
import logging

import numpy as np

from apps.tensors import ops
from apps.tensors.counters import count_flops
from apps.tensors.exceptions import ShapeError
from apps.tensors.tensor import Tensor

from .blocks import AdapterBlock, CBRBlock, DoubleConvBlock, ResidualSEBlock
from .config import ModelConfig
from .encoder import DownsampleSumFusion, PVTEncoder
from .layers import Conv2d
from .modules import Module, ModuleList

logger = logging.getLogger(__name__)


class SegModel(Module):
    def __init__(self, config):
        super().__init__()
        self.config = config.validate()
        self.variant = config.model_variant
        rng = np.random.default_rng(config.seed)
        c1, c2, c3 = config.stage_channels
        eps, momentum = config.norm_eps, config.bn_momentum

        self.encoder = PVTEncoder(rng, config.encoder_config())
        self.fusion = DownsampleSumFusion(rng, config.stage_channels) if self.variant.uses_fusion else None

        # skips[0] transforms the 1/8 map, skips[1] the 1/4 map
        self.skips = ModuleList(self._skip(rng, channels) for channels in (c2, c1))
        self.decoder = ModuleList(
            self._decoder_block(rng, in_channels, out_channels)
            for in_channels, out_channels in ((c3 + c2, c2), (c2 + c1, c1))
        )
        self.head = Conv2d(rng, c1, 1, kernel_size=1)
        logger.debug(f"Built {self.variant.value} model with {self.param_count()} parameters")

    def _skip(self, rng, channels):
        cfg = self.config
        if self.variant.uses_adapter:
            return AdapterBlock(
                rng, channels, channels,
                reduction=cfg.adapter_reduction,
                activation=cfg.adapter_activation,
                shared=cfg.adapter_shared,
            )
        return CBRBlock(rng, channels, channels, cfg.norm_eps, cfg.bn_momentum)

    def _decoder_block(self, rng, in_channels, out_channels):
        cfg = self.config
        if self.variant.uses_residual:
            return ResidualSEBlock(rng, in_channels, out_channels, cfg.se_reduction, cfg.norm_eps, cfg.bn_momentum)
        return DoubleConvBlock(rng, in_channels, out_channels, cfg.norm_eps, cfg.bn_momentum)

    def features(self, x):
        pyramid = self.encoder(x)
        if self.fusion is not None:
            pyramid = self.fusion(pyramid)
        return pyramid

    def logits(self, x):
        if x.ndim != 4:
            raise ShapeError(f"Model expects [B, C, H, W] images, got {x.shape}")
        pyramid = self.features(x)
        d = pyramid.f3
        for skip, block, source in zip(self.skips, self.decoder, (pyramid.f2, pyramid.f1)):
            d = ops.upsample_bilinear_2x(d)
            d = block(ops.concat_channels([d, skip(source)]))
        d = ops.upsample_bilinear(d, 4)
        return self.head(d)

    def forward(self, x):
        """[B, 3, H, W] images to [B, 1, H, W] probabilities in (0, 1)"""
        return ops.sigmoid(self.logits(x))


def build_model(config=None):
    config = config or ModelConfig()
    return SegModel(config)


def param_count(model):
    return model.param_count()


def flop_estimate(model, height, width, batch=1):
    """
    Multiply-add FLOPs of one eval-mode forward, counted per matmul/conv.

    Batch-norm running statistics are left untouched.
    """
    was_training = model.training
    model.eval()
    try:
        x = Tensor(np.zeros((batch, model.config.in_channels, height, width)))
        with count_flops() as counter:
            model(x)
    finally:
        model.train(was_training)
    return counter.total
