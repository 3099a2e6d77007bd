"""
Training hyperparameters and run configuration files.

A run configuration file is JSON with optional ``model`` and ``train``
objects whose keys mirror ModelConfig and TrainConfig fields::

    {"model": {"variant": "full", "image_size": 64},
     "train": {"epochs": 10, "batch_size": 4}}

Command-line flags override file values.
"""
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from django.conf import settings

from apps.networks.config import ModelConfig
from apps.networks.exceptions import ConfigError

from .exceptions import TrainingError
from .losses import LOSS_PRESETS, LossConfig
from .optim import AdamConfig

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 8
    early_stop_patience: int = 5
    min_delta: float = 1e-4
    loss: str = 'total'
    loss_weights: dict = None
    loss_alpha: float = 1.0
    loss_epsilon: float = 1.0
    augment: bool = True
    threshold: float = 0.5
    seed: int = 0

    def validate(self):
        if self.learning_rate <= 0:
            raise TrainingError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.early_stop_patience < 1:
            raise TrainingError(f"early_stop_patience must be >= 1, got {self.early_stop_patience}")
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainingError("epochs and batch_size must be >= 1")
        if self.min_delta < 0:
            raise TrainingError(f"min_delta must be >= 0, got {self.min_delta}")
        if self.loss not in LOSS_PRESETS:
            raise TrainingError(f"Unknown loss preset '{self.loss}', expected one of {', '.join(LOSS_PRESETS)}")
        if not 0.0 <= self.threshold <= 1.0:
            raise TrainingError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.loss_weights is not None and not isinstance(self.loss_weights, dict):
            raise TrainingError(f"loss_weights must map bce/dice/jaccard to numbers, got {self.loss_weights!r}")
        self.adam_config().validate()
        self.loss_config().validate()
        return self

    def adam_config(self):
        return AdamConfig(lr=self.learning_rate, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    def loss_config(self):
        config = LossConfig.preset(self.loss)
        if self.loss_weights:
            config = config.with_weights(self.loss_weights)
        config.alpha = self.loss_alpha
        config.epsilon = self.loss_epsilon
        return config

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise TrainingError(f"Unknown train config keys: {', '.join(unknown)}")
        return cls(**data)


def _drop_unset(overrides):
    return {key: value for key, value in (overrides or {}).items() if value is not None}


def load_run_config(path=None, model_overrides=None, train_overrides=None):
    """
    Merge defaults, an optional JSON file and flag overrides.

    Returns validated (ModelConfig, TrainConfig). Overrides set to None are
    ignored so unset flags never mask file values.
    """
    data = {}
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            logger.error(f"Cannot read run config {path}: {exc}")
            raise TrainingError(f"Cannot read run config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise TrainingError(f"Run config {path} must hold a JSON object")
        unknown = sorted(set(data) - {'model', 'train'})
        if unknown:
            raise TrainingError(f"Unknown run config sections: {', '.join(unknown)}")

    model_values = {'image_size': settings.SEGMENTATION_IMAGE_SIZE, 'seed': settings.SEGMENTATION_DEFAULT_SEED}
    model_values.update(data.get('model', {}))
    model_values.update(_drop_unset(model_overrides))
    train_values = {'seed': settings.SEGMENTATION_DEFAULT_SEED}
    train_values.update(data.get('train', {}))
    train_values.update(_drop_unset(train_overrides))

    try:
        model_config = ModelConfig.from_dict(model_values).validate()
    except TypeError as exc:
        raise ConfigError(f"Invalid model config: {exc}") from exc
    try:
        train_config = TrainConfig.from_dict(train_values).validate()
    except TypeError as exc:
        raise TrainingError(f"Invalid train config: {exc}") from exc
    return model_config, train_config


def add_run_arguments(parser):
    """Flags shared by the commands that train: each overrides the --config file"""
    parser.add_argument('--config', type=str, help='JSON run config with "model" and "train" sections')
    parser.add_argument('--seed', type=int, help='Seed for weights, splits, shuffling and augmentation')
    parser.add_argument('--image-size', type=int, help='Training resolution (multiple of 16)')
    parser.add_argument('--epochs', type=int, help='Epoch budget')
    parser.add_argument('--batch-size', type=int, help='Samples per batch')
    parser.add_argument('--lr', type=float, help='Adam learning rate')
    parser.add_argument('--loss', choices=sorted(LOSS_PRESETS), help='Loss preset')
    parser.add_argument('--loss-weights', type=float, nargs=3, metavar=('BCE', 'DICE', 'JACCARD'),
                        help='Component weights replacing those of the preset')
    parser.add_argument('--patience', type=int, help='Early stopping patience in epochs')
    parser.add_argument('--no-augment', action='store_true', help='Disable training augmentation')


def _loss_weights(values):
    if values is None:
        return None
    return dict(zip(('bce', 'dice', 'jaccard'), values))


def run_config_from_options(options, variant=None):
    """Merged (ModelConfig, TrainConfig) for a command's parsed options"""
    model_overrides = {
        'variant': variant,
        'image_size': options.get('image_size'),
        'seed': options.get('seed'),
    }
    train_overrides = {
        'seed': options.get('seed'),
        'epochs': options.get('epochs'),
        'batch_size': options.get('batch_size'),
        'learning_rate': options.get('lr'),
        'loss': options.get('loss'),
        'loss_weights': _loss_weights(options.get('loss_weights')),
        'early_stop_patience': options.get('patience'),
        'augment': False if options.get('no_augment') else None,
    }
    return load_run_config(options.get('config'), model_overrides, train_overrides)
