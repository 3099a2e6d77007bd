"""
Architecture configuration.

``ModelConfig`` is the JSON-serializable description of a network; its
field names are the keys of the ``"model"`` section of a run config file.
"""
from dataclasses import asdict, dataclass, field, fields
from enum import Enum

from .exceptions import ConfigError


class ModelVariant(str, Enum):
    """The four ablation variants, each adding one component to the previous"""

    BASE = 'base'
    DS_ENC = 'dsenc'
    DS_ENC_RES = 'dsencres'
    FULL = 'full'

    @property
    def uses_fusion(self):
        return self in (ModelVariant.DS_ENC, ModelVariant.DS_ENC_RES, ModelVariant.FULL)

    @property
    def uses_residual(self):
        return self in (ModelVariant.DS_ENC_RES, ModelVariant.FULL)

    @property
    def uses_adapter(self):
        return self is ModelVariant.FULL

    @classmethod
    def parse(cls, value):
        try:
            return cls(value)
        except ValueError:
            choices = ', '.join(v.value for v in cls)
            raise ConfigError(f"Unknown variant '{value}', expected one of: {choices}")


ADAPTER_ACTIVATIONS = ('relu', 'leaky_relu', 'gelu')


@dataclass
class EncoderConfig:
    stage_channels: list = field(default_factory=lambda: [32, 64, 128])
    stage_depths: list = field(default_factory=lambda: [2, 2, 2])
    sr_ratios: list = field(default_factory=lambda: [4, 2, 1])
    num_heads: list = field(default_factory=lambda: [1, 2, 4])
    patch_strides: list = field(default_factory=lambda: [4, 2, 2])
    mlp_ratio: int = 4
    in_channels: int = 3
    norm_eps: float = 1e-5
    zero_init_residual: bool = False

    @property
    def total_stride(self):
        stride = 1
        for s in self.patch_strides:
            stride *= s
        return stride

    def validate(self):
        lists = (self.stage_channels, self.stage_depths, self.sr_ratios, self.num_heads, self.patch_strides)
        if len({len(values) for values in lists}) != 1 or len(self.stage_channels) != 3:
            raise ConfigError("Encoder needs exactly three stages in every per-stage list")
        if any(b <= a for a, b in zip(self.stage_channels, self.stage_channels[1:])):
            raise ConfigError(f"Stage channels must strictly increase, got {self.stage_channels}")
        for channels, heads in zip(self.stage_channels, self.num_heads):
            if heads < 1 or channels % heads:
                raise ConfigError(f"Stage width {channels} is not divisible by {heads} heads")
        if any(r < 1 for r in self.sr_ratios):
            raise ConfigError(f"Spatial-reduction ratios must be >= 1, got {self.sr_ratios}")
        if any(d < 0 for d in self.stage_depths):
            raise ConfigError(f"Stage depths must be >= 0, got {self.stage_depths}")
        if any(s < 1 for s in self.patch_strides):
            raise ConfigError(f"Patch strides must be >= 1, got {self.patch_strides}")
        if self.mlp_ratio < 1:
            raise ConfigError("mlp_ratio must be >= 1")
        return self


@dataclass
class ModelConfig:
    variant: str = ModelVariant.FULL.value
    image_size: int = 256
    in_channels: int = 3
    stage_channels: list = field(default_factory=lambda: [32, 64, 128])
    stage_depths: list = field(default_factory=lambda: [2, 2, 2])
    sr_ratios: list = field(default_factory=lambda: [4, 2, 1])
    num_heads: list = field(default_factory=lambda: [1, 2, 4])
    patch_strides: list = field(default_factory=lambda: [4, 2, 2])
    mlp_ratio: int = 4
    se_reduction: int = 8
    adapter_reduction: int = 2
    adapter_activation: str = 'relu'
    adapter_shared: bool = False
    zero_init_residual: bool = False
    norm_eps: float = 1e-5
    bn_momentum: float = 0.1
    seed: int = 0

    @property
    def model_variant(self):
        return ModelVariant.parse(self.variant)

    def encoder_config(self):
        return EncoderConfig(
            stage_channels=list(self.stage_channels),
            stage_depths=list(self.stage_depths),
            sr_ratios=list(self.sr_ratios),
            num_heads=list(self.num_heads),
            patch_strides=list(self.patch_strides),
            mlp_ratio=self.mlp_ratio,
            in_channels=self.in_channels,
            norm_eps=self.norm_eps,
            zero_init_residual=self.zero_init_residual,
        )

    def validate(self):
        ModelVariant.parse(self.variant)
        encoder = self.encoder_config().validate()
        if self.image_size % encoder.total_stride:
            raise ConfigError(f"image_size {self.image_size} must be divisible by {encoder.total_stride}")
        if self.se_reduction < 1 or self.adapter_reduction < 2:
            raise ConfigError("se_reduction must be >= 1 and adapter_reduction >= 2")
        if ModelVariant.parse(self.variant).uses_residual and min(self.stage_channels[:2]) < self.se_reduction:
            raise ConfigError(
                f"Decoder widths {self.stage_channels[:2]} too narrow for SE reduction {self.se_reduction}"
            )
        if min(self.stage_channels) < self.adapter_reduction:
            raise ConfigError(
                f"Stage widths {self.stage_channels} too narrow for adapter reduction {self.adapter_reduction}"
            )
        if self.adapter_activation not in ADAPTER_ACTIVATIONS:
            raise ConfigError(
                f"adapter_activation must be one of {ADAPTER_ACTIVATIONS}, got '{self.adapter_activation}'"
            )
        if self.norm_eps <= 0 or not 0 < self.bn_momentum <= 1:
            raise ConfigError("norm_eps must be positive and bn_momentum in (0, 1]")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown model config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def tiny(cls, **overrides):
        """Desk-scale configuration used by tests and quick runs"""
        values = dict(
            image_size=64,
            stage_channels=[16, 32, 64],
            stage_depths=[1, 1, 1],
            num_heads=[1, 2, 4],
        )
        values.update(overrides)
        return cls(**values)
