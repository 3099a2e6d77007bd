"""
Synthetic polyp-like dataset.

Each image is a smooth reddish texture with one to three elliptical blobs
of a distinct colour and softened edges; the mask marks exactly the
pixels inside the ellipses. Sample ``i`` draws from its own rng seeded
with ``(seed, i)``, so a given seed always writes the same bytes.
"""
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .codecs import write_netpbm
from .exceptions import DatasetError
from .index import DEFAULT_FRACTIONS, build_index
from .samples import array_to_pixels, resize_bilinear

logger = logging.getLogger(__name__)

MAX_DRAWS = 50
EDGE_SHARPNESS = 12.0


@dataclass
class SynthSpec:
    count: int = 100
    image_size: int = 64
    min_blobs: int = 1
    max_blobs: int = 3
    min_radius: float = 0.08
    max_radius: float = 0.2
    noise_amplitude: float = 0.08
    seed: int = 0

    def validate(self):
        if self.count < 1:
            raise DatasetError(f"count must be >= 1, got {self.count}")
        if self.image_size < 16 or self.image_size % 16:
            raise DatasetError(f"image_size must be a positive multiple of 16, got {self.image_size}")
        if not 1 <= self.min_blobs <= self.max_blobs:
            raise DatasetError(f"Blob count range [{self.min_blobs}, {self.max_blobs}] is invalid")
        # radii are fractions of the image side
        if not 0 < self.min_radius <= self.max_radius < 0.5:
            raise DatasetError(f"Radius range [{self.min_radius}, {self.max_radius}] must lie in (0, 0.5)")
        if self.noise_amplitude < 0:
            raise DatasetError("noise_amplitude must be >= 0")
        return self


def _texture(rng, size, amplitude):
    base = rng.uniform([0.55, 0.28, 0.25], [0.75, 0.42, 0.38])[:, None, None]
    coarse = rng.standard_normal((3, max(size // 8, 2), max(size // 8, 2)))
    smooth = resize_bilinear(coarse, (size, size))
    fine = rng.standard_normal((3, size, size))
    return base + amplitude * smooth + 0.25 * amplitude * fine


def _ellipse_distance(rng, size, radius_range):
    """Normalized elliptical distance of every pixel centre to one random blob"""
    ry, rx = rng.uniform(*radius_range, size=2) * size
    extent = max(ry, rx)
    cy, cx = rng.uniform(extent, size - extent, size=2)
    angle = rng.uniform(0, np.pi)
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    dy, dx = ys - cy, xs - cx
    u = dx * np.cos(angle) + dy * np.sin(angle)
    v = -dx * np.sin(angle) + dy * np.cos(angle)
    return np.sqrt((u / rx) ** 2 + (v / ry) ** 2)


def render_sample(rng, spec):
    """Return (image [3, S, S] in [0, 1], mask [S, S] bool)"""
    size = spec.image_size
    for _ in range(MAX_DRAWS):
        image = _texture(rng, size, spec.noise_amplitude)
        mask = np.zeros((size, size), dtype=bool)
        for _ in range(int(rng.integers(spec.min_blobs, spec.max_blobs + 1))):
            distance = _ellipse_distance(rng, size, (spec.min_radius, spec.max_radius))
            colour = rng.uniform([0.85, 0.6, 0.45], [1.0, 0.8, 0.6])[:, None, None]
            weight = 1.0 / (1.0 + np.exp(-EDGE_SHARPNESS * (1.0 - distance)))
            image = (1.0 - weight) * image + weight * colour
            mask |= distance < 1.0
        fraction = mask.mean()
        if 0.0 < fraction < 0.5:
            return np.clip(image, 0.0, 1.0), mask
    raise DatasetError(f"Could not draw a mask with foreground fraction in (0, 0.5) after {MAX_DRAWS} tries")


def generate_synthetic(spec, out_dir, fractions=DEFAULT_FRACTIONS):
    """Write ``spec.count`` image/mask pairs plus ``index.json`` and index them"""
    spec.validate()
    out_dir = Path(out_dir)
    image_dir, mask_dir = out_dir / 'images', out_dir / 'masks'
    try:
        image_dir.mkdir(parents=True, exist_ok=True)
        mask_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        logger.error(f"Cannot create dataset directory {out_dir}: {exc}")
        raise DatasetError(f"Cannot create dataset directory {out_dir}: {exc}") from exc

    pairs = []
    for i in range(spec.count):
        rng = np.random.default_rng([spec.seed, i])
        image, mask = render_sample(rng, spec)
        stem = f"synth_{i:05d}"
        write_netpbm(image_dir / f"{stem}.ppm", array_to_pixels(image))
        write_netpbm(mask_dir / f"{stem}.pgm", mask.astype(np.uint8) * 255)
        pairs.append([f"images/{stem}.ppm", f"masks/{stem}.pgm"])

    manifest = {'spec': asdict(spec), 'pairs': pairs}
    try:
        (out_dir / 'index.json').write_text(json.dumps(manifest, indent=2, sort_keys=True) + '\n')
    except OSError as exc:
        logger.error(f"Cannot write index manifest in {out_dir}: {exc}")
        raise DatasetError(f"Cannot write index manifest in {out_dir}: {exc}") from exc

    logger.info(f"Generated {spec.count} synthetic pairs of {spec.image_size}x{spec.image_size} in {out_dir}")
    return build_index(out_dir, fractions=fractions, seed=spec.seed)
