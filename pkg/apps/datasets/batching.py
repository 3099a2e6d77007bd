"""
Mini-batch streams with background decoding.

The coordinating thread fixes the epoch order and every augmentation
before any file is read; a worker thread only decodes and stacks samples
into a bounded queue, so prefetching never changes the batches produced.
"""
import logging
import queue
import threading
from dataclasses import dataclass

import numpy as np
from django.conf import settings

from apps.tensors.tensor import get_precision, precision

from .augmentation import IDENTITY, apply_augmentation, draw_augmentation
from .exceptions import DatasetError
from .samples import as_size, load_sample

logger = logging.getLogger(__name__)

_DONE = object()


@dataclass
class Batch:
    images: np.ndarray
    masks: np.ndarray
    names: list
    indices: list

    def __len__(self):
        return len(self.indices)


def epoch_order(count, seed, shuffle=True):
    if not shuffle:
        return list(range(count))
    return [int(i) for i in np.random.default_rng(seed).permutation(count)]


def batch_slices(count, batch_size):
    """Full batches and one final partial batch"""
    return [(start, min(start + batch_size, count)) for start in range(0, count, batch_size)]


class Batcher:
    """
    Iterates (image, mask) pairs as Batch objects.

    Args:
        pairs: list of (image_path, mask_path)
        batch_size: samples per batch, the last batch may be smaller
        image_size: target size passed to load_sample, None keeps native size
        seed: base seed; epoch ``e`` shuffles with ``(seed, e)``
        shuffle: draw a fresh order per epoch
        augment: draw a random augmentation per sample
        prefetch: bounded queue depth, 0 decodes on the calling thread
    """

    def __init__(self, pairs, batch_size, image_size=None, seed=0, shuffle=True, augment=False, prefetch=None):
        if batch_size < 1:
            raise DatasetError(f"batch_size must be >= 1, got {batch_size}")
        if not pairs:
            raise DatasetError("Cannot batch an empty index")
        self.pairs = list(pairs)
        self.batch_size = batch_size
        self.image_size = as_size(image_size)
        self.seed = seed
        self.shuffle = shuffle
        self.augment = augment
        self.prefetch = settings.SEGMENTATION_PREFETCH if prefetch is None else prefetch

    def __len__(self):
        return len(batch_slices(len(self.pairs), self.batch_size))

    def plan(self, epoch=0):
        """The epoch's batches as lists of (index, augmentation), fully determined by seed and epoch"""
        rng = np.random.default_rng([self.seed, epoch])
        order = epoch_order(len(self.pairs), rng.integers(2 ** 32), self.shuffle)
        square = self.image_size is None or self.image_size[0] == self.image_size[1]
        augmentations = [
            draw_augmentation(rng, square=square) if self.augment else IDENTITY
            for _ in order
        ]
        return [
            list(zip(order[start:stop], augmentations[start:stop]))
            for start, stop in batch_slices(len(order), self.batch_size)
        ]

    def load_batch(self, items):
        samples = []
        for index, augmentation in items:
            image_path, mask_path = self.pairs[index]
            sample = load_sample(image_path, mask_path, self.image_size)
            if not augmentation.is_identity:
                sample = apply_augmentation(sample, augmentation)
            samples.append(sample)
        shapes = {sample.image.shape for sample in samples}
        if len(shapes) > 1:
            raise DatasetError(f"Samples of different sizes in one batch: {sorted(shapes)}; set an image size")
        return Batch(
            images=np.stack([sample.image for sample in samples]),
            masks=np.stack([sample.mask for sample in samples]),
            names=[sample.name for sample in samples],
            indices=[index for index, _ in items],
        )

    def epoch(self, epoch=0):
        plan = self.plan(epoch)
        if self.prefetch < 1:
            for items in plan:
                yield self.load_batch(items)
            return
        yield from self._prefetched(plan)

    def _prefetched(self, plan):
        handoff = queue.Queue(maxsize=self.prefetch)
        # the worker decodes in the precision of the coordinating thread
        dtype_name = get_precision()
        stop = threading.Event()

        def put(item):
            while not stop.is_set():
                try:
                    handoff.put(item, timeout=0.1)
                    return True
                except queue.Full:
                    continue
            return False

        def work():
            try:
                with precision(dtype_name):
                    for items in plan:
                        if not put(self.load_batch(items)):
                            return
            except Exception as exc:
                put(exc)
                return
            put(_DONE)

        worker = threading.Thread(target=work, name='batch-prefetch', daemon=True)
        worker.start()
        try:
            while True:
                item = handoff.get()
                if item is _DONE:
                    break
                if isinstance(item, Exception):
                    logger.error(f"Batch prefetch failed: {item}")
                    raise item
                yield item
        finally:
            stop.set()
            worker.join()

    def __iter__(self):
        return self.epoch(0)
