"""
Central finite-difference checks of the analytic gradients.

The error measure is |analytic - numeric| / max(1, |numeric|) per entry,
and a check passes when the worst sampled entry is below the tolerance.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .tape import GradTape

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-4


@dataclass
class GradCheckResult:
    name: str
    max_error: float
    tolerance: float
    entries_checked: int

    @property
    def passed(self):
        return bool(self.max_error < self.tolerance)


def analytic_gradients(loss_fn, tensors):
    for tensor in tensors:
        tensor.zero_grad()
    with GradTape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    return [
        tensor.grad.copy() if tensor.grad is not None else np.zeros_like(tensor.data)
        for tensor in tensors
    ]


def numeric_gradient(loss_fn, tensor, index, step=DEFAULT_STEP):
    original = tensor.data[index]
    try:
        tensor.data[index] = original + step
        plus = loss_fn().item()
        tensor.data[index] = original - step
        minus = loss_fn().item()
    finally:
        tensor.data[index] = original
    return (plus - minus) / (2 * step)


def sample_indices(shape, max_entries, rng):
    size = int(np.prod(shape))
    if max_entries is None or size <= max_entries:
        flat = np.arange(size)
    else:
        flat = np.sort(rng.choice(size, size=max_entries, replace=False))
    return [np.unravel_index(i, shape) for i in flat]


def check_gradients(name, loss_fn, tensors, tolerance=1e-5, step=DEFAULT_STEP, max_entries=None, seed=0):
    """
    Compare backward() against central differences for ``tensors``.

    ``loss_fn`` must rebuild the scalar loss from the current tensor values
    on every call; it runs once under a tape and twice per sampled entry
    without one.
    """
    rng = np.random.default_rng(seed)
    grads = analytic_gradients(loss_fn, tensors)
    worst = 0.0
    checked = 0
    for tensor, grad in zip(tensors, grads):
        for index in sample_indices(tensor.shape, max_entries, rng):
            numeric = numeric_gradient(loss_fn, tensor, index, step)
            error = abs(float(grad[index]) - numeric) / max(1.0, abs(numeric))
            worst = max(worst, error)
            checked += 1
    result = GradCheckResult(name=name, max_error=worst, tolerance=tolerance, entries_checked=checked)
    if result.passed:
        logger.debug(f"Gradient check {name}: max error {worst:.3e} over {checked} entries")
    else:
        logger.warning(f"Gradient check {name} failed: max error {worst:.3e} >= {tolerance:.1e}")
    return result
