"""
Gradient-check and self-test suites behind the ``gradcheck`` and
``selftest`` commands.

Every check runs at 64-bit precision from a fixed seed and reports a
pass/fail row; a check that raises is reported as failed with the error.
Primitive ops must match central differences within 1e-5, composite
blocks within 1e-4 (1e-3 where a ReLU kink can sit inside the step) and
the whole model within 1e-3.
"""
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from apps.networks.blocks import AdapterBlock, ResidualSEBlock, SEBlock
from apps.networks.config import ModelConfig, ModelVariant
from apps.networks.encoder import SpatialReductionAttention, TransformerBlock
from apps.networks.network import build_model
from apps.tensors import ops
from apps.tensors.gradcheck import check_gradients
from apps.tensors.tensor import Tensor, precision

from .checkpoints import capture, decode_checkpoint, encode_checkpoint
from .losses import bce_loss, dice_loss, jaccard_loss, loss_components, total_loss
from .metrics import confusion_counts, dice_coef, iou
from .optim import Adam, AdamConfig, adam_step
from .trainer import EarlyStopping

logger = logging.getLogger(__name__)

PRIMITIVE_TOLERANCE = 1e-5
BLOCK_TOLERANCE = 1e-4
END_TO_END_TOLERANCE = 1e-3


@dataclass
class CheckOutcome:
    name: str
    passed: bool
    detail: str = ''
    seconds: float = 0.0


@dataclass
class SuiteReport:
    title: str
    outcomes: list = field(default_factory=list)

    @property
    def passed(self):
        return bool(self.outcomes) and all(outcome.passed for outcome in self.outcomes)

    @property
    def failures(self):
        return [outcome for outcome in self.outcomes if not outcome.passed]

    def table(self):
        width = max([len(outcome.name) for outcome in self.outcomes] + [5])
        lines = [f"{'check':<{width}}  result  seconds  detail"]
        for outcome in self.outcomes:
            status = 'PASS' if outcome.passed else 'FAIL'
            lines.append(f"{outcome.name:<{width}}  {status:<6}  {outcome.seconds:7.2f}  {outcome.detail}")
        return '\n'.join(lines)


def _run(name, check, *args):
    started = time.perf_counter()
    try:
        passed, detail = check(*args)
    except Exception as exc:
        logger.error(f"Check {name} raised {type(exc).__name__}: {exc}")
        passed, detail = False, f"{type(exc).__name__}: {exc}"
    outcome = CheckOutcome(name, bool(passed), detail, time.perf_counter() - started)
    logger.debug(f"{name}: {'pass' if outcome.passed else 'FAIL'} ({detail})")
    return outcome


# Gradient checks

def _param(rng, *shape, kind='normal'):
    values = rng.standard_normal(shape)
    if kind == 'away_from_zero':
        values = np.sign(values) * (0.2 + np.abs(values))
    elif kind == 'positive':
        values = 0.5 + np.abs(values)
    elif kind == 'probability':
        values = rng.uniform(0.05, 0.95, size=shape)
    return Tensor(values, requires_grad=True)


def _projected(rng, fn):
    """Scalar loss from a fixed random projection of ``fn()``'s output; scalars pass through"""
    cache = {}

    def loss():
        out = fn()
        if out.data.size == 1:
            return out
        if 'weights' not in cache:
            cache['weights'] = Tensor(rng.standard_normal(out.shape))
        return ops.mul(out, cache['weights']).sum()
    return loss


def _gradient(name, fn, tensors, tolerance, max_entries=None, seed=0):
    rng = np.random.default_rng(seed)
    result = check_gradients(name, _projected(rng, fn), tensors, tolerance=tolerance, max_entries=max_entries)
    return result.passed, f"max rel err {result.max_error:.2e} over {result.entries_checked} entries (tol {tolerance:g})"


def gradient_cases(rng, include_model=True):
    """(name, fn, tensors, tolerance, max_entries) for every differentiable op and block"""
    a, b = _param(rng, 2, 3, 4, 4), _param(rng, 2, 3, 4, 4)
    scale, bias = _param(rng, 2, 3, 1, 1), _param(rng, 4)
    kinked = _param(rng, 2, 3, 4, 4, kind='away_from_zero')
    positive = _param(rng, 2, 3, 4, 4, kind='positive')
    m1, m2 = _param(rng, 2, 4, 5), _param(rng, 5, 3)
    x_conv, w_conv, b_conv = _param(rng, 2, 4, 6, 6), _param(rng, 4, 2, 3, 3), _param(rng, 4)
    x_patch, w_patch = _param(rng, 1, 3, 8, 8), _param(rng, 4, 3, 7, 7)
    tokens, ln_gamma, ln_beta = _param(rng, 2, 5, 6), _param(rng, 6), _param(rng, 6)
    bn_gamma, bn_beta = _param(rng, 3), _param(rng, 3)
    pred, target = _param(rng, 2, 1, 4, 4, kind='probability'), Tensor(rng.integers(0, 2, (2, 1, 4, 4)))

    cases = [
        ('add', lambda: ops.add(a, b), [a, b], PRIMITIVE_TOLERANCE, None),
        ('add-broadcast', lambda: ops.add(a, bias), [a, bias], PRIMITIVE_TOLERANCE, None),
        ('sub', lambda: ops.sub(a, b), [a, b], PRIMITIVE_TOLERANCE, None),
        ('mul-channel', lambda: ops.mul(a, scale), [a, scale], PRIMITIVE_TOLERANCE, None),
        ('div', lambda: ops.div(a, positive), [a, positive], PRIMITIVE_TOLERANCE, None),
        ('log', lambda: ops.log(positive), [positive], PRIMITIVE_TOLERANCE, None),
        ('clip', lambda: ops.clip(kinked, -1.0, 1.0), [kinked], PRIMITIVE_TOLERANCE, None),
        ('relu', lambda: ops.relu(kinked), [kinked], PRIMITIVE_TOLERANCE, None),
        ('leaky_relu', lambda: ops.leaky_relu(kinked), [kinked], PRIMITIVE_TOLERANCE, None),
        ('gelu', lambda: ops.gelu(a), [a], BLOCK_TOLERANCE, None),
        ('sigmoid', lambda: ops.sigmoid(a), [a], PRIMITIVE_TOLERANCE, None),
        ('softmax', lambda: ops.softmax(a, axis=-1), [a], PRIMITIVE_TOLERANCE, None),
        ('matmul', lambda: ops.matmul(m1, m2), [m1, m2], PRIMITIVE_TOLERANCE, None),
        ('reduce_mean', lambda: ops.reduce_mean(a, axis=(2, 3)), [a], PRIMITIVE_TOLERANCE, None),
        ('reshape-transpose', lambda: ops.transpose(ops.reshape(a, (2, 3, 16)), (0, 2, 1)), [a], PRIMITIVE_TOLERANCE, None),
        ('concat', lambda: ops.concat_channels([a, b]), [a, b], PRIMITIVE_TOLERANCE, None),
        ('pad2d', lambda: ops.pad2d(a, (0, 1, 0, 2)), [a], PRIMITIVE_TOLERANCE, None),
        ('conv2d-grouped', lambda: ops.conv2d(x_conv, w_conv, b_conv, stride=2, padding=1, groups=2),
         [x_conv, w_conv, b_conv], PRIMITIVE_TOLERANCE, None),
        ('conv2d-patch', lambda: ops.conv2d(x_patch, w_patch, None, stride=4, padding=3),
         [x_patch, w_patch], PRIMITIVE_TOLERANCE, 40),
        ('layer_norm', lambda: ops.layer_norm(tokens, ln_gamma, ln_beta), [tokens, ln_gamma, ln_beta],
         PRIMITIVE_TOLERANCE, None),
        ('batch_norm2d', lambda: ops.batch_norm2d(a, bn_gamma, bn_beta), [a, bn_gamma, bn_beta],
         PRIMITIVE_TOLERANCE, None),
        ('global_avg_pool', lambda: ops.global_avg_pool(a), [a], PRIMITIVE_TOLERANCE, None),
        ('upsample_bilinear', lambda: ops.upsample_bilinear(a, 4), [a], PRIMITIVE_TOLERANCE, None),
        ('downsample', lambda: ops.downsample(a, 2), [a], PRIMITIVE_TOLERANCE, None),
        ('bce_loss', lambda: bce_loss(pred, target), [pred], PRIMITIVE_TOLERANCE, None),
        ('dice_loss', lambda: dice_loss(pred, target), [pred], PRIMITIVE_TOLERANCE, None),
        ('jaccard_loss', lambda: jaccard_loss(pred, target), [pred], PRIMITIVE_TOLERANCE, None),
    ]

    se = SEBlock(rng, 8, reduction=2)
    x_se = _param(rng, 2, 8, 3, 3)
    cases.append(('se-block', lambda: se(x_se), [x_se] + se.parameters(), BLOCK_TOLERANCE, 8))

    residual = ResidualSEBlock(rng, 8, 4, se_reduction=2)
    x_res = _param(rng, 2, 8, 4, 4)
    cases.append(('residual-se-block', lambda: residual(x_res), [x_res] + residual.parameters(),
                  END_TO_END_TOLERANCE, 6))

    adapter = AdapterBlock(rng, 8, 8, reduction=2)
    x_adapter = _param(rng, 2, 8, 3, 3)
    cases.append(('adapter-block', lambda: adapter(x_adapter), [x_adapter] + adapter.parameters(),
                  END_TO_END_TOLERANCE, 8))

    block = TransformerBlock(rng, 8, num_heads=2, sr_ratio=2)
    x_block = _param(rng, 1, 16, 8)
    cases.append(('transformer-block', lambda: block(x_block, 4, 4),
                  [x_block] + block.parameters(), END_TO_END_TOLERANCE, 6))

    if include_model:
        cases.append(model_gradient_case(rng))
    return cases


def model_gradient_case(rng, variant=ModelVariant.FULL.value, max_entries=2):
    """
    Every parameter of a micro model through sigmoid and the compound loss.

    BatchNorm stays in training mode, so each finite-difference evaluation
    normalizes with the statistics of the perturbed batch.
    """
    model = build_model(micro_model_config(variant))
    images = Tensor(rng.standard_normal((2, 3, 32, 32)))
    masks = Tensor(rng.integers(0, 2, (2, 1, 32, 32)))
    return (f"{variant}-model", lambda: total_loss(model(images), masks), model.parameters(),
            END_TO_END_TOLERANCE, max_entries)


def micro_model_config(variant=ModelVariant.FULL.value):
    return ModelConfig(
        variant=variant,
        image_size=32,
        stage_channels=[8, 16, 32],
        stage_depths=[1, 1, 1],
        num_heads=[1, 2, 4],
    )


def gradcheck_suite(seed=0, include_model=True):
    """Finite-difference check of every differentiable op, block and the full model"""
    report = SuiteReport('gradcheck')
    with precision('float64'):
        rng = np.random.default_rng(seed)
        for name, fn, tensors, tolerance, max_entries in gradient_cases(rng, include_model):
            report.outcomes.append(_run(name, _gradient, name, fn, tensors, tolerance, max_entries, seed))
    logger.info(f"gradcheck: {len(report.outcomes) - len(report.failures)}/{len(report.outcomes)} passed")
    return report


# Invariants

def check_loss_identities(rng):
    y = Tensor(rng.integers(0, 2, (2, 1, 8, 8)))
    problems = []
    if dice_loss(y, y).item() != 0.0 or jaccard_loss(y, y).item() != 0.0:
        problems.append('perfect prediction does not give zero Dice/Jaccard loss')
    if abs(jaccard_loss(Tensor([0.5, 0.5]), Tensor([1.0, 0.0])).item() - 0.4) > 1e-9:
        problems.append('Jaccard hand case != 0.4')
    if abs(dice_loss(Tensor([1.0, 0.0, 0.0, 0.0]), Tensor([1.0, 1.0, 0.0, 0.0])).item() - 0.25) > 1e-9:
        problems.append('Dice hand case != 0.25')
    if abs(bce_loss(Tensor(np.full((4, 4), 0.5)), y.data[0, 0, :4, :4]).item() - math.log(2.0)) > 1e-12:
        problems.append('BCE at p = 0.5 != ln 2')
    pred = Tensor(rng.uniform(0.01, 0.99, (2, 1, 8, 8)))
    parts = loss_components(pred, y)
    gap = abs(total_loss(pred, y).item() - sum(part.item() for part in parts.values()))
    if gap > 1e-7:
        problems.append(f"total loss differs from component sum by {gap:.2e}")
    return not problems, '; '.join(problems) or 'zero at perfect prediction, hand cases, additivity'


def check_metric_oracle(rng, pairs=1000, size=16):
    worst_identity = 0.0
    for _ in range(pairs):
        pred = rng.integers(0, 2, (size, size))
        truth = rng.integers(0, 2, (size, size))
        tp = fp = fn = tn = 0
        for p, t in zip(pred.ravel().tolist(), truth.ravel().tolist()):
            if p and t:
                tp += 1
            elif p:
                fp += 1
            elif t:
                fn += 1
            else:
                tn += 1
        if confusion_counts(pred, truth) != (tp, fp, fn, tn):
            return False, f"confusion counts differ from the pixel oracle: {(tp, fp, fn, tn)}"
        dice, jaccard = dice_coef(pred, truth), iou(pred, truth)
        expected_dice = 1.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
        if dice != expected_dice:
            return False, f"Dice {dice} differs from oracle {expected_dice}"
        worst_identity = max(worst_identity, abs(dice - 2 * jaccard / (1 + jaccard)))
    if worst_identity > 1e-9:
        return False, f"Dice-IoU identity off by {worst_identity:.2e}"
    return True, f"{pairs} random {size}x{size} pairs"


def _zero(module):
    for param in module.parameters():
        param.data[...] = 0


def check_block_degeneracies(rng):
    problems = []
    se = SEBlock(rng, 16, reduction=8)
    _zero(se)
    u = Tensor(rng.standard_normal((2, 16, 3, 3)))
    if not np.array_equal(se(u).data, 0.5 * u.data):
        problems.append('zero SE gate is not 0.5')

    residual = ResidualSEBlock(rng, 6, 6, se_reduction=2)
    _zero(residual)
    x = Tensor(rng.standard_normal((2, 6, 5, 5)))
    if not np.array_equal(residual(x).data, np.maximum(x.data, 0)):
        problems.append('zero-branch residual block is not ReLU(x)')

    adapter = AdapterBlock(rng, 8, 8)
    _zero(adapter)
    if np.any(adapter(Tensor(rng.standard_normal((2, 8, 3, 3)))).data != 0):
        problems.append('zero adapter does not output zeros')

    attn = SpatialReductionAttention(rng, 8, num_heads=2, sr_ratio=1)
    tokens = Tensor(rng.standard_normal((2, 4, 8)))

    def project(layer, values):
        return values @ layer.weight.data + layer.bias.data

    def heads(values):
        return values.reshape(2, 4, 2, 4).transpose(0, 2, 1, 3)

    q, k, v = (heads(project(layer, tokens.data)) for layer in (attn.q, attn.k, attn.v))
    scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(4)
    weights = np.exp(scores - scores.max(axis=-1, keepdims=True))
    weights /= weights.sum(axis=-1, keepdims=True)
    expected = project(attn.proj, (weights @ v).transpose(0, 2, 1, 3).reshape(2, 4, 8))
    out, _ = attn.attend(tokens, 2, 2)
    gap = float(np.max(np.abs(out.data - expected)))
    if gap > 1e-6:
        problems.append(f"sr=1 attention differs from reference by {gap:.2e}")
    return not problems, '; '.join(problems) or 'SE 0.5, residual ReLU, adapter zero, SRA reference'


def check_shape_contract(rng):
    for variant in ModelVariant:
        model = build_model(ModelConfig.tiny(variant=variant.value, seed=int(rng.integers(1000))))
        for size in (64, 96):
            out = model(Tensor(rng.uniform(0.0, 1.0, (2, 3, size, size)))).data
            if out.shape != (2, 1, size, size):
                return False, f"{variant.value} at {size}: output shape {out.shape}"
            if not np.all((out > 0) & (out < 1)):
                return False, f"{variant.value} at {size}: outputs leave (0, 1)"
    return True, f"{len(ModelVariant)} variants at 64x64 and 96x96"


def check_early_stopping(rng):
    stopper = EarlyStopping(patience=5, min_delta=1e-4)
    sequence = [0.50, 0.60] + [0.60 - 0.01 * i for i in range(1, 20)]
    stopped_after = None
    for epoch, value in enumerate(sequence, start=1):
        stopper.update(value)
        if stopper.should_stop:
            stopped_after = epoch
            break
    return stopped_after == 7, f"stopped after epoch {stopped_after} (expected 7)"


def check_checkpoint_round_trip(rng):
    model = build_model(micro_model_config())
    optimizer = Adam(model.named_parameters(), AdamConfig())
    for param in model.parameters():
        param.grad = rng.standard_normal(param.shape)
    optimizer.step()
    first = encode_checkpoint(capture(model, optimizer, {'seed': 0}, epoch=1, step=optimizer.t, best=0.5))
    second = encode_checkpoint(decode_checkpoint(first))
    return first == second, f"{len(first)} bytes, identical after reload: {first == second}"


def check_adam_convergence(rng):
    theta = {'theta': np.array([1.0])}
    state = {}
    config = AdamConfig(lr=0.1)
    for t in range(1, 201):
        adam_step(theta, {'theta': 2.0 * theta['theta']}, state, config, t)
    value = abs(float(theta['theta'][0]))
    return value < 1e-2, f"|theta| = {value:.2e} after 200 steps"


INVARIANT_CHECKS = [
    ('loss-identities', check_loss_identities),
    ('metric-oracle', check_metric_oracle),
    ('block-degeneracies', check_block_degeneracies),
    ('shape-contract', check_shape_contract),
    ('early-stopping', check_early_stopping),
    ('checkpoint-round-trip', check_checkpoint_round_trip),
    ('adam-convergence', check_adam_convergence),
]


def selftest_suite(seed=0, include_model=True):
    """Gradient checks followed by the algebraic and contract invariants"""
    report = gradcheck_suite(seed, include_model)
    report.title = 'selftest'
    with precision('float64'):
        for name, check in INVARIANT_CHECKS:
            report.outcomes.append(_run(name, check, np.random.default_rng([seed, len(report.outcomes)])))
    logger.info(f"selftest: {len(report.outcomes) - len(report.failures)}/{len(report.outcomes)} passed")
    return report
