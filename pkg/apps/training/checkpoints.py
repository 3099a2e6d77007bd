"""
PVTA checkpoint files.

Layout (all integers little-endian):

    b"PVTA"  u32 version  u32 len + UTF-8 JSON  u32 tensor count
    per tensor: u16 len + UTF-8 name, u8 dtype tag, u8 rank,
                rank x u32 dims, row-major values

Dtype tags: 0 = float32, 1 = float64. Tensors are stored as model
parameters, then batch-norm buffers, then Adam moments
(``adam.m.<name>``, ``adam.v.<name>``). The JSON blob is written with
sorted keys and compact separators, so load-then-save reproduces a file
byte for byte.
"""
import json
import logging
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b'PVTA'
VERSION = 1
DTYPE_TAGS = {0: np.dtype('<f4'), 1: np.dtype('<f8')}
TAG_BY_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
OPTIMIZER_PREFIX = 'adam.'


@dataclass
class Checkpoint:
    model_config: dict
    train_config: dict = field(default_factory=dict)
    tensors: OrderedDict = field(default_factory=OrderedDict)
    epoch: int = 0
    step: int = 0
    best: float = None
    stale_epochs: int = 0
    version: int = VERSION

    def header(self):
        return {
            'model': self.model_config,
            'train': self.train_config,
            'epoch': self.epoch,
            'step': self.step,
            'best': self.best,
            'stale_epochs': self.stale_epochs,
        }

    def model_tensors(self):
        return OrderedDict((k, v) for k, v in self.tensors.items() if not k.startswith(OPTIMIZER_PREFIX))

    def optimizer_tensors(self):
        return OrderedDict((k, v) for k, v in self.tensors.items() if k.startswith(OPTIMIZER_PREFIX))


def encode_checkpoint(checkpoint):
    blob = json.dumps(checkpoint.header(), sort_keys=True, separators=(',', ':')).encode('utf-8')
    parts = [MAGIC, struct.pack('<I', checkpoint.version), struct.pack('<I', len(blob)), blob]
    parts.append(struct.pack('<I', len(checkpoint.tensors)))
    for name, values in checkpoint.tensors.items():
        values = np.asarray(values)
        if values.dtype not in TAG_BY_DTYPE:
            raise CheckpointError(f"Tensor {name} has unsupported dtype {values.dtype}")
        tag = TAG_BY_DTYPE[values.dtype]
        encoded_name = name.encode('utf-8')
        parts.append(struct.pack('<H', len(encoded_name)))
        parts.append(encoded_name)
        parts.append(struct.pack('<BB', tag, values.ndim))
        parts.append(struct.pack(f"<{values.ndim}I", *values.shape))
        parts.append(np.ascontiguousarray(values, dtype=DTYPE_TAGS[tag]).tobytes())
    return b''.join(parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, size, what):
        if self.pos + size > len(self.data):
            raise CheckpointError(f"Truncated checkpoint while reading {what}")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(data):
    reader = _Reader(data)
    magic = reader.take(4, 'magic')
    if magic != MAGIC:
        raise CheckpointError(f"Not a PVTA checkpoint (magic {magic!r})")
    (version,) = reader.unpack('<I', 'version')
    if version != VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}, expected {VERSION}")
    (length,) = reader.unpack('<I', 'config length')
    try:
        header = json.loads(reader.take(length, 'config').decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"Corrupt checkpoint config: {exc}") from exc

    (count,) = reader.unpack('<I', 'tensor count')
    tensors = OrderedDict()
    for _ in range(count):
        (name_length,) = reader.unpack('<H', 'name length')
        name = reader.take(name_length, 'tensor name').decode('utf-8')
        tag, rank = reader.unpack('<BB', f"header of {name}")
        if tag not in DTYPE_TAGS:
            raise CheckpointError(f"Unknown dtype tag {tag} for {name}")
        shape = reader.unpack(f"<{rank}I", f"shape of {name}")
        dtype = DTYPE_TAGS[tag]
        size = int(np.prod(shape)) * dtype.itemsize
        values = np.frombuffer(reader.take(size, f"values of {name}"), dtype=dtype).reshape(shape)
        if name in tensors:
            raise CheckpointError(f"Tensor {name} appears twice")
        tensors[name] = values.astype(dtype.newbyteorder('='))
    if reader.pos != len(data):
        raise CheckpointError(f"{len(data) - reader.pos} trailing bytes after the last tensor")

    try:
        return Checkpoint(
            model_config=header['model'],
            train_config=header.get('train', {}),
            tensors=tensors,
            epoch=int(header['epoch']),
            step=int(header.get('step', 0)),
            best=header.get('best'),
            stale_epochs=int(header.get('stale_epochs', 0)),
            version=version,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"Checkpoint config is missing fields: {exc}") from exc


def save_checkpoint(checkpoint, path):
    """Write through a temporary file so a crash never leaves a half-written checkpoint"""
    path = Path(path)
    data = encode_checkpoint(checkpoint)
    tmp = path.with_name(path.name + '.tmp')
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as exc:
        logger.error(f"Cannot write checkpoint {path}: {exc}")
        raise CheckpointError(f"Cannot write checkpoint {path}: {exc}") from exc
    logger.debug(f"Wrote checkpoint {path} ({len(data)} bytes, epoch {checkpoint.epoch})")
    return path


def load_checkpoint(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        logger.error(f"Cannot read checkpoint {path}: {exc}")
        raise CheckpointError(f"Cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(data)


def capture(model, optimizer=None, train_config=None, epoch=0, step=0, best=None, stale_epochs=0):
    """Snapshot a model (and optionally its optimizer) into a Checkpoint"""
    tensors = OrderedDict(model.state_dict())
    if optimizer is not None:
        tensors.update((name, values.copy()) for name, values in optimizer.moments().items())
    return Checkpoint(
        model_config=model.config.to_dict(),
        train_config=dict(train_config or {}),
        tensors=tensors,
        epoch=epoch,
        step=step,
        best=best,
        stale_epochs=stale_epochs,
    )


def restore_model(checkpoint, model):
    """Copy checkpoint weights into ``model``; the architecture must match exactly"""
    from apps.networks.exceptions import ConfigError

    if checkpoint.model_config != model.config.to_dict():
        raise CheckpointError("Checkpoint was written for a different model configuration")
    try:
        model.load_state_dict(checkpoint.model_tensors())
    except ConfigError as exc:
        raise CheckpointError(f"Checkpoint does not fit the model: {exc.message}") from exc


def restore_optimizer(checkpoint, optimizer):
    optimizer.load_moments(checkpoint.optimizer_tensors(), checkpoint.step)
