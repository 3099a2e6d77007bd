"""
Segmentation metrics on binary masks.

Conventions for empty denominators: Dice and IoU of two empty masks are
1; precision (recall) is 1 when nothing was predicted (nothing was there)
and nothing was missed (nothing was falsely predicted), else 0; F-beta is
0 when precision and recall are both 0.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from apps.tensors.tensor import Tensor

from .exceptions import MetricError

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5
PER_IMAGE_KEYS = ('dice', 'iou', 'recall', 'precision', 'f2', 'f_beta_weighted', 'tp', 'fp', 'fn', 'tn')
REPORT_KEYS = ('miou', 'mdice', 'recall', 'precision', 'f2')


def _values(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _binary(name, x):
    values = _values(x)
    if not np.all((values == 0) | (values == 1)):
        raise MetricError(f"{name} must be a binary mask")
    return values.astype(bool)


def binarize(probabilities, threshold=DEFAULT_THRESHOLD):
    """Foreground where the probability is at least ``threshold``"""
    return (_values(probabilities) >= threshold).astype(np.uint8)


def confusion_counts(pred_bin, target):
    pred, truth = _binary('prediction', pred_bin), _binary('target', target)
    if pred.shape != truth.shape:
        raise MetricError(f"Prediction shape {pred.shape} does not match target shape {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    tn = int(pred.size - tp - fp - fn)
    return tp, fp, fn, tn


def _dice(tp, fp, fn):
    denominator = 2 * tp + fp + fn
    return 1.0 if denominator == 0 else 2.0 * tp / denominator


def _iou(tp, fp, fn):
    denominator = tp + fp + fn
    return 1.0 if denominator == 0 else tp / denominator


def _precision(tp, fp, fn):
    if tp + fp == 0:
        return 1.0 if fn == 0 else 0.0
    return tp / (tp + fp)


def _recall(tp, fp, fn):
    if tp + fn == 0:
        return 1.0 if fp == 0 else 0.0
    return tp / (tp + fn)


def _f_beta(p, r, beta):
    if p == 0 and r == 0:
        return 0.0
    b2 = beta * beta
    return (1 + b2) * p * r / (b2 * p + r)


def dice_coef(pred_bin, target):
    tp, fp, fn, _ = confusion_counts(pred_bin, target)
    return _dice(tp, fp, fn)


def iou(pred_bin, target):
    tp, fp, fn, _ = confusion_counts(pred_bin, target)
    return _iou(tp, fp, fn)


def precision(pred_bin, target):
    tp, fp, fn, _ = confusion_counts(pred_bin, target)
    return _precision(tp, fp, fn)


def recall(pred_bin, target):
    tp, fp, fn, _ = confusion_counts(pred_bin, target)
    return _recall(tp, fp, fn)


def f_beta(pred_bin, target, beta=2.0, weight_map=None):
    """
    (1 + b²)·P·R / (b²·P + R).

    With ``weight_map`` the confusion counts are sums of per-pixel weights;
    uniform weights give the standard F-beta.
    """
    if beta <= 0:
        raise MetricError(f"beta must be positive, got {beta}")
    if weight_map is None:
        tp, fp, fn, _ = confusion_counts(pred_bin, target)
    else:
        pred, truth = _binary('prediction', pred_bin), _binary('target', target)
        weights = _values(weight_map).astype(np.float64)
        if weights.shape != pred.shape or pred.shape != truth.shape:
            raise MetricError(f"Weight map {weights.shape} must match masks {pred.shape} and {truth.shape}")
        if np.any(weights < 0):
            raise MetricError("Weight map must be non-negative")
        tp = float(weights[pred & truth].sum())
        fp = float(weights[pred & ~truth].sum())
        fn = float(weights[~pred & truth].sum())
    return _f_beta(_precision(tp, fp, fn), _recall(tp, fp, fn), beta)


def image_metrics(pred_bin, target, beta=2.0, weight_map=None):
    tp, fp, fn, tn = confusion_counts(pred_bin, target)
    p, r = _precision(tp, fp, fn), _recall(tp, fp, fn)
    f2 = _f_beta(p, r, beta)
    weighted = f2 if weight_map is None else f_beta(pred_bin, target, beta, weight_map)
    return {
        'dice': _dice(tp, fp, fn),
        'iou': _iou(tp, fp, fn),
        'recall': r,
        'precision': p,
        'f2': f2,
        'f_beta_weighted': weighted,
        'tp': tp, 'fp': fp, 'fn': fn, 'tn': tn,
    }


@dataclass
class MetricsReport:
    """Per-image metrics and their arithmetic means"""

    per_image: list = field(default_factory=list)
    names: list = field(default_factory=list)

    def __len__(self):
        return len(self.per_image)

    def mean(self, key):
        if not self.per_image:
            raise MetricError("Cannot average metrics over zero images")
        return float(np.mean([item[key] for item in self.per_image]))

    @property
    def mdice(self):
        return self.mean('dice')

    @property
    def miou(self):
        return self.mean('iou')

    @property
    def mean_f_beta_weighted(self):
        return self.mean('f_beta_weighted')

    def extend(self, other):
        self.per_image.extend(other.per_image)
        self.names.extend(other.names)
        return self

    def to_dict(self):
        """JSON schema of evaluation reports"""
        per_image = []
        for i, item in enumerate(self.per_image):
            entry = {key: item[key] for key in PER_IMAGE_KEYS}
            if i < len(self.names):
                entry['name'] = self.names[i]
            per_image.append(entry)
        return {
            'miou': self.miou,
            'mdice': self.mdice,
            'recall': self.mean('recall'),
            'precision': self.mean('precision'),
            'f2': self.mean('f2'),
            'per_image': per_image,
        }


def evaluate_batch(outputs, targets, threshold=DEFAULT_THRESHOLD, beta=2.0, names=None, weight_maps=None):
    """
    Threshold [B, 1, H, W] probabilities and score every image against its
    binary target.
    """
    probabilities, truth = _values(outputs), _values(targets)
    if probabilities.shape[0] == 0 or probabilities.size == 0:
        raise MetricError("Cannot evaluate an empty batch")
    if probabilities.shape != truth.shape:
        raise MetricError(f"Output shape {probabilities.shape} does not match target shape {truth.shape}")
    predicted = binarize(probabilities, threshold)
    per_image = []
    for i in range(predicted.shape[0]):
        weight_map = None if weight_maps is None else _values(weight_maps)[i]
        per_image.append(image_metrics(predicted[i], truth[i], beta, weight_map))
    return MetricsReport(per_image=per_image, names=list(names or []))
