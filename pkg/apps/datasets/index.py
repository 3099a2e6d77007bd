"""
Dataset directory index and seeded train/val/test split.

Layout: ``<root>/images/<stem>.(ppm|pgm|png)`` and
``<root>/masks/<stem>.(pgm|png)``; pairs are matched on the stem and kept
in stem order.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codecs import IMAGE_SUFFIXES
from .exceptions import DatasetError

logger = logging.getLogger(__name__)

SPLITS = ('train', 'val', 'test')
DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)


@dataclass
class DatasetIndex:
    root: Path
    pairs: list
    splits: dict = field(default_factory=dict)
    seed: int = 0

    def __len__(self):
        return len(self.pairs)

    def split(self, name):
        """The (image, mask) pairs of one split, or of the whole index for 'all'"""
        if name == 'all':
            return list(self.pairs)
        if name not in self.splits:
            raise DatasetError(f"Unknown split '{name}', expected one of {', '.join(SPLITS)} or all")
        return [self.pairs[i] for i in self.splits[name]]

    def to_dict(self):
        return {
            'root': str(self.root),
            'seed': self.seed,
            'pairs': [[str(image), str(mask)] for image, mask in self.pairs],
            'splits': {name: list(indices) for name, indices in self.splits.items()},
        }


def _files_by_stem(directory):
    files = {}
    for path in sorted(directory.iterdir()):
        if not path.is_file() or path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        if path.stem in files:
            raise DatasetError(f"Two files share the stem '{path.stem}' in {directory}")
        files[path.stem] = path
    return files


def split_counts(total, fractions):
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-6:
        raise DatasetError(f"Split fractions must be three non-negative values summing to 1, got {fractions}")
    val = int(round(fractions[1] * total))
    test = int(round(fractions[2] * total))
    train = total - val - test
    if train < 1:
        raise DatasetError(f"{total} pairs leave no training samples for fractions {fractions}")
    return train, val, test


def assign_splits(total, fractions=DEFAULT_FRACTIONS, seed=0):
    """Seeded shuffle cut into train/val/test; indices within a split are sorted"""
    counts = split_counts(total, fractions)
    order = np.random.default_rng(seed).permutation(total)
    splits = {}
    start = 0
    for name, count in zip(SPLITS, counts):
        splits[name] = sorted(int(i) for i in order[start:start + count])
        start += count
    return splits


def build_index(root, fractions=DEFAULT_FRACTIONS, seed=0):
    root = Path(root)
    image_dir, mask_dir = root / 'images', root / 'masks'
    for directory in (image_dir, mask_dir):
        if not directory.is_dir():
            raise DatasetError(f"Dataset directory {directory} does not exist")

    images = _files_by_stem(image_dir)
    masks = _files_by_stem(mask_dir)
    if not images:
        raise DatasetError(f"No images found in {image_dir}")
    unmatched = sorted(set(images) - set(masks))
    if unmatched:
        raise DatasetError(f"Images without a mask: {', '.join(unmatched[:5])}")

    pairs = [(images[stem], masks[stem]) for stem in sorted(images)]
    index = DatasetIndex(root=root, pairs=pairs, splits=assign_splits(len(pairs), fractions, seed), seed=seed)
    counts = ', '.join(f"{name} {len(index.splits[name])}" for name in SPLITS)
    logger.info(f"Indexed {len(pairs)} pairs under {root} ({counts})")
    return index
