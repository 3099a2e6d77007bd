"""
Image/mask pairs as arrays ready for the network.

A Sample holds an image of shape [3, H, W] with values in [0, 1] and a
mask of shape [1, H, W] with values in {0, 1}, both in the active tensor
precision.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from apps.tensors.ops import bilinear_weights
from apps.tensors.tensor import get_dtype

from .codecs import read_image
from .exceptions import DatasetError

logger = logging.getLogger(__name__)

MASK_THRESHOLD = 128


@dataclass
class Sample:
    image: np.ndarray
    mask: np.ndarray
    name: str = ''

    @property
    def size(self):
        return self.image.shape[1:]

    def copy(self):
        return Sample(self.image.copy(), self.mask.copy(), self.name)


def as_size(target_size):
    if target_size is None:
        return None
    if isinstance(target_size, int):
        return target_size, target_size
    height, width = target_size
    return int(height), int(width)


def resize_bilinear(image, size):
    """Resize a [C, H, W] array with the align-corners=false bilinear filter"""
    height, width = size
    if image.shape[1:] == (height, width):
        return image
    rows = bilinear_weights(image.shape[1], height, dtype=image.dtype)
    cols = bilinear_weights(image.shape[2], width, dtype=image.dtype)
    return np.matmul(np.matmul(rows, image), cols.T)


def resize_nearest(mask, size):
    """Nearest-neighbour resize of a [C, H, W] array, sampling pixel centres"""
    height, width = size
    if mask.shape[1:] == (height, width):
        return mask
    src_h, src_w = mask.shape[1:]
    rows = np.minimum(((np.arange(height) + 0.5) * src_h / height).astype(int), src_h - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * src_w / width).astype(int), src_w - 1)
    return mask[:, rows][:, :, cols]


def image_to_array(pixels):
    """uint8 [H, W] or [H, W, 3] pixels to a [3, H, W] float image in [0, 1]"""
    if pixels.ndim == 2:
        pixels = np.repeat(pixels[:, :, None], 3, axis=2)
    return np.transpose(pixels, (2, 0, 1)).astype(get_dtype()) / 255.0


def mask_to_array(pixels):
    """uint8 mask pixels to a [1, H, W] binary mask; colour masks use the first channel"""
    if pixels.ndim == 3:
        pixels = pixels[:, :, 0]
    return (pixels >= MASK_THRESHOLD).astype(get_dtype())[None]


def array_to_pixels(image):
    """Inverse of image_to_array for values on the 1/255 grid"""
    pixels = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    pixels = np.transpose(pixels, (1, 2, 0))
    return pixels[:, :, 0] if pixels.shape[2] == 1 else pixels


def load_sample(image_path, mask_path, target_size=None):
    """
    Read an image and its mask and bring both to ``target_size``.

    The image is resized bilinearly, the mask is binarized first and then
    resized with nearest-neighbour sampling, so it stays binary.
    """
    image_path, mask_path = Path(image_path), Path(mask_path)
    for path in (image_path, mask_path):
        if not path.is_file():
            raise DatasetError(f"Missing file {path}")
    image = image_to_array(read_image(image_path))
    mask = mask_to_array(read_image(mask_path))
    if image.shape[1:] != mask.shape[1:]:
        raise DatasetError(
            f"Image {image_path.name} is {image.shape[1:]} but its mask is {mask.shape[1:]}"
        )
    size = as_size(target_size)
    if size is not None:
        image = resize_bilinear(image, size)
        mask = resize_nearest(mask, size)
        if image.shape[1:] != size or mask.shape[1:] != size:
            raise DatasetError(f"Resize of {image_path.name} produced {image.shape[1:]}, expected {size}")
    logger.debug(f"Loaded {image_path.name} at {image.shape[1]}x{image.shape[2]}")
    return Sample(image=image, mask=mask, name=image_path.stem)
