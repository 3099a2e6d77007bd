"""
Paired augmentation of image and mask.

Parameters are drawn up front (``draw_augmentation``) and applied
separately (``apply_augmentation``), so a batcher can pre-draw every
epoch's randomness on the coordinating thread. Geometric transforms act
identically on image and mask; brightness touches the image only.
"""
from dataclasses import dataclass

import numpy as np

from .samples import Sample

BRIGHTNESS_RANGE = (0.8, 1.2)


@dataclass(frozen=True)
class Augmentation:
    hflip: bool = False
    vflip: bool = False
    rotations: int = 0
    brightness: float = 1.0

    @property
    def is_identity(self):
        return not self.hflip and not self.vflip and self.rotations % 4 == 0 and self.brightness == 1.0


IDENTITY = Augmentation()


def draw_augmentation(rng, square=True):
    """Quarter turns are only drawn for square samples"""
    hflip = bool(rng.random() < 0.5)
    vflip = bool(rng.random() < 0.5)
    rotations = int(rng.integers(0, 4)) if square else 0
    brightness = float(rng.uniform(*BRIGHTNESS_RANGE))
    return Augmentation(hflip=hflip, vflip=vflip, rotations=rotations, brightness=brightness)


def transform_geometry(array, augmentation):
    """Apply the flips and quarter turns to a [C, H, W] array"""
    if augmentation.hflip:
        array = array[:, :, ::-1]
    if augmentation.vflip:
        array = array[:, ::-1, :]
    if augmentation.rotations % 4:
        array = np.rot90(array, k=augmentation.rotations, axes=(1, 2))
    return np.ascontiguousarray(array)


def apply_augmentation(sample, augmentation):
    image = transform_geometry(sample.image, augmentation)
    mask = transform_geometry(sample.mask, augmentation)
    if augmentation.brightness != 1.0:
        image = np.clip(image * augmentation.brightness, 0.0, 1.0).astype(sample.image.dtype)
    return Sample(image=image, mask=mask, name=sample.name)


def augment(sample, seed):
    rng = np.random.default_rng(seed)
    height, width = sample.size
    return apply_augmentation(sample, draw_augmentation(rng, square=height == width))
