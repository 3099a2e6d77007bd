"""
Run-level services shared by the management commands and Celery tasks:
training a configured model on a dataset directory, evaluating a
checkpoint on a split, and segmenting a single image.
"""
import json
import logging
from pathlib import Path

import numpy as np

from apps.datasets.batching import Batcher
from apps.datasets.codecs import read_image, write_netpbm
from apps.datasets.index import DEFAULT_FRACTIONS, build_index
from apps.datasets.samples import image_to_array
from apps.networks.config import ModelConfig
from apps.networks.network import build_model

from .checkpoints import load_checkpoint, restore_model
from .exceptions import CheckpointError, TrainingError
from .metrics import DEFAULT_THRESHOLD, binarize
from .runs import RunRecorder
from .trainer import evaluate, predict, train

logger = logging.getLogger(__name__)


def make_batchers(index, image_size, train_config, train_split='train', val_split='val', prefetch=None):
    train_pairs, val_pairs = index.split(train_split), index.split(val_split)
    if not train_pairs or not val_pairs:
        raise TrainingError(
            f"Training needs non-empty '{train_split}' and '{val_split}' splits, "
            f"got {len(train_pairs)} and {len(val_pairs)} pairs"
        )
    train_batcher = Batcher(
        train_pairs, train_config.batch_size, image_size,
        seed=train_config.seed, shuffle=True, augment=train_config.augment, prefetch=prefetch,
    )
    val_batcher = Batcher(
        val_pairs, train_config.batch_size, image_size,
        seed=train_config.seed, shuffle=False, augment=False, prefetch=prefetch,
    )
    return train_batcher, val_batcher


def run_training(data_root, model_config, train_config, out_dir=None, resume=False, record=True,
                 fractions=DEFAULT_FRACTIONS, train_split='train', val_split='val', prefetch=None):
    """
    Index ``data_root``, build the model and train it.

    Returns (TrainResult, registry run id or None). The run directory also
    receives ``config.json`` with the merged configuration.
    """
    index = build_index(data_root, fractions=fractions, seed=train_config.seed)
    train_batcher, val_batcher = make_batchers(
        index, model_config.image_size, train_config, train_split, val_split, prefetch
    )
    model = build_model(model_config)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        merged = {'model': model_config.to_dict(), 'train': train_config.to_dict()}
        (out_dir / 'config.json').write_text(json.dumps(merged, indent=2, sort_keys=True) + '\n')

    recorder = RunRecorder(model_config, train_config, data_root, out_dir or '') if record else None
    result = train(
        model, train_batcher, val_batcher, train_config, out_dir,
        resume=resume, callbacks=[recorder] if recorder else [],
    )
    return result, recorder.run_id if recorder else None


def load_model(checkpoint_path):
    """Rebuild the model a checkpoint was written for and load its weights"""
    checkpoint = load_checkpoint(checkpoint_path)
    try:
        config = ModelConfig.from_dict(checkpoint.model_config).validate()
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"Checkpoint holds an invalid model config: {exc}") from exc
    model = build_model(config)
    restore_model(checkpoint, model)
    model.eval()
    return model, checkpoint


def evaluate_checkpoint(data_root, checkpoint_path, split='test', threshold=DEFAULT_THRESHOLD, batch_size=None):
    """
    Score a checkpoint on one split of a dataset directory.

    The split is drawn with the seed recorded in the checkpoint, so 'test'
    is the same held-out set the run never trained on.
    """
    model, checkpoint = load_model(checkpoint_path)
    seed = checkpoint.train_config.get('seed', 0)
    index = build_index(data_root, seed=seed)
    pairs = index.split(split)
    if not pairs:
        raise TrainingError(f"Split '{split}' of {data_root} is empty")
    batcher = Batcher(
        pairs, batch_size or checkpoint.train_config.get('batch_size', 8),
        model.config.image_size, seed=seed, shuffle=False, augment=False,
    )
    _, report = evaluate(model, batcher, threshold=threshold)
    logger.info(f"Evaluated {checkpoint_path} on {len(report)} {split} images: mDice {report.mdice:.4f}")
    return report


def padding_hint(height, width, stride):
    target = (-(-height // stride) * stride, -(-width // stride) * stride)
    return f"pad to {target[0]}x{target[1]} (add {target[0] - height} rows and {target[1] - width} columns)"


def segment_image(model, image_path, threshold=DEFAULT_THRESHOLD):
    """
    Segment one image at its own resolution.

    Returns (mask uint8 [H, W] with values 0/255, probabilities [H, W]).
    """
    pixels = read_image(image_path)
    height, width = pixels.shape[:2]
    stride = model.config.encoder_config().total_stride
    if height % stride or width % stride:
        raise TrainingError(
            f"Image {Path(image_path).name} is {height}x{width}; both sides must be divisible by "
            f"{stride}: {padding_hint(height, width, stride)}"
        )
    probabilities = predict(model, image_to_array(pixels)[None])[0, 0]
    mask = binarize(probabilities, threshold).astype(np.uint8) * 255
    return mask, probabilities


def write_probabilities(path, probabilities):
    """Probability map quantized to 8 bits, 0 -> 0 and 1 -> 255"""
    pixels = np.clip(np.round(np.asarray(probabilities, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    write_netpbm(path, pixels)
    return Path(path)
