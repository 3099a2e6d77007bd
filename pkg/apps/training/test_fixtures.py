"""
Test Fixtures for the Training App

Small synthetic datasets, the micro model configuration and helpers to
build trainers and run-config files in a scratch directory.
"""
import json

import numpy as np

from apps.datasets.batching import Batcher
from apps.datasets.test_fixtures import DatasetTestCase
from apps.networks.config import ModelConfig
from apps.tensors.tensor import Tensor, precision

from .config import TrainConfig

MICRO_MODEL = dict(
    image_size=32,
    stage_channels=[8, 16, 32],
    stage_depths=[1, 1, 1],
    num_heads=[1, 2, 4],
)


def micro_config(**overrides):
    values = dict(MICRO_MODEL)
    values.update(overrides)
    return ModelConfig(**values)


def quick_train_config(**overrides):
    values = dict(epochs=2, batch_size=4, learning_rate=1e-3, early_stop_patience=5, seed=3)
    values.update(overrides)
    return TrainConfig(**values)


class TrainingTestCase(DatasetTestCase):
    """Scratch directory plus a 12-pair 32x32 synthetic dataset built on demand"""

    float64 = False

    def setUp(self):
        super().setUp()
        if self.float64:
            context = precision('float64')
            context.__enter__()
            self.addCleanup(context.__exit__, None, None, None)
        self.rng = np.random.default_rng(7)

    def dataset(self, count=12, size=32, seed=0, name='synth'):
        return self.synthetic(count=count, size=size, seed=seed, name=name, fractions=(0.5, 0.25, 0.25))

    def batchers(self, index, train_config, image_size=32):
        train = Batcher(index.split('train'), train_config.batch_size, image_size,
                        seed=train_config.seed, augment=train_config.augment, prefetch=0)
        val = Batcher(index.split('val'), train_config.batch_size, image_size,
                      seed=train_config.seed, shuffle=False, prefetch=0)
        return train, val

    def write_run_config(self, model=None, train=None, name='run.json'):
        path = self.tmp / name
        path.write_text(json.dumps({'model': model or dict(MICRO_MODEL), 'train': train or {}}))
        return path


class MaskEchoModel:
    """Stand-in model whose probability map is the first image channel"""

    def __init__(self, config=None):
        self.config = config or micro_config()
        self.training = True

    def train(self, mode=True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def __call__(self, x):
        return Tensor(x.data[:, :1])
