"""
Segmentation losses on probability maps.

All three losses are computed over every pixel of the batch at once;
Dice and Jaccard use the soft-set reading |X ∩ Y| = Σ y·ŷ so they stay
differentiable for continuous predictions.
"""
from dataclasses import asdict, dataclass, fields, replace

from apps.tensors import ops
from apps.tensors.exceptions import ShapeError

from .exceptions import TrainingError

BCE_CLAMP = 1e-7


@dataclass
class LossConfig:
    alpha: float = 1.0
    epsilon: float = 1.0
    w_bce: float = 1.0
    w_dice: float = 1.0
    w_jac: float = 1.0

    def validate(self):
        if self.alpha <= 0 or self.epsilon <= 0:
            raise TrainingError(f"alpha and epsilon must be positive, got {self.alpha} and {self.epsilon}")
        if min(self.w_bce, self.w_dice, self.w_jac) < 0:
            raise TrainingError("Loss weights must be >= 0")
        if self.w_bce + self.w_dice + self.w_jac == 0:
            raise TrainingError("At least one loss weight must be positive")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise TrainingError(f"Unknown loss config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def preset(cls, name):
        if name not in LOSS_PRESETS:
            raise TrainingError(f"Unknown loss preset '{name}', expected one of {', '.join(LOSS_PRESETS)}")
        return cls(**LOSS_PRESETS[name])

    def with_weights(self, weights):
        """Copy with some of the bce/dice/jaccard weights replaced"""
        unknown = sorted(set(weights) - set(WEIGHT_FIELDS))
        if unknown:
            raise TrainingError(
                f"Unknown loss weight keys: {', '.join(unknown)}, expected {', '.join(WEIGHT_FIELDS)}"
            )
        try:
            values = {WEIGHT_FIELDS[key]: float(value) for key, value in weights.items()}
        except (TypeError, ValueError) as exc:
            raise TrainingError(f"Loss weights must be numbers: {exc}") from exc
        return replace(self, **values)


LOSS_PRESETS = {
    'total': dict(w_bce=1.0, w_dice=1.0, w_jac=1.0),
    'bce_dice': dict(w_bce=1.0, w_dice=1.0, w_jac=0.0),
    'dice_jaccard': dict(w_bce=0.0, w_dice=1.0, w_jac=1.0),
}
WEIGHT_FIELDS = {'bce': 'w_bce', 'dice': 'w_dice', 'jaccard': 'w_jac'}


def _check(pred, target):
    if pred.shape != target.shape:
        raise ShapeError(f"Prediction shape {pred.shape} does not match target shape {target.shape}")
    return ops._as_tensor(target)


def bce_loss(pred, target):
    """Mean binary cross-entropy with p clamped to [1e-7, 1 - 1e-7]"""
    y = _check(pred, target)
    p = ops.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    per_pixel = ops.add(ops.mul(y, ops.log(p)), ops.mul(1.0 - y, ops.log(1.0 - p)))
    return ops.neg(ops.reduce_mean(per_pixel))


def jaccard_loss(pred, target, alpha=1.0):
    """alpha * (1 - (Σ y·ŷ + alpha) / (Σ (y + ŷ - y·ŷ) + alpha))"""
    y = _check(pred, target)
    overlap = ops.mul(y, pred)
    intersection = ops.reduce_sum(overlap)
    union = ops.reduce_sum(ops.sub(ops.add(y, pred), overlap))
    ratio = ops.div(ops.add(intersection, alpha), ops.add(union, alpha))
    return ops.mul(1.0 - ratio, alpha)


def dice_loss(pred, target, epsilon=1.0):
    """1 - (2 Σ y·ŷ + eps) / (Σ y + Σ ŷ + eps)"""
    y = _check(pred, target)
    intersection = ops.reduce_sum(ops.mul(y, pred))
    total = ops.add(ops.reduce_sum(y), ops.reduce_sum(pred))
    return 1.0 - ops.div(ops.add(ops.mul(intersection, 2.0), epsilon), ops.add(total, epsilon))


def loss_components(pred, target, config=None):
    config = config or LossConfig()
    return {
        'bce': bce_loss(pred, target),
        'dice': dice_loss(pred, target, config.epsilon),
        'jaccard': jaccard_loss(pred, target, config.alpha),
    }


def combine(components, config):
    return ops.add(
        ops.add(ops.mul(components['bce'], config.w_bce), ops.mul(components['dice'], config.w_dice)),
        ops.mul(components['jaccard'], config.w_jac),
    )


def total_loss(pred, target, config=None):
    """w_bce * BCE + w_dice * Dice + w_jac * Jaccard"""
    config = (config or LossConfig()).validate()
    return combine(loss_components(pred, target, config), config)
