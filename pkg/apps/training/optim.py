"""
Adam optimizer over named parameters.

Moment buffers are keyed by the dotted parameter names of the model, so
they can be written to and restored from checkpoints.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import DivergenceError, TrainingError

logger = logging.getLogger(__name__)


@dataclass
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self):
        if self.lr <= 0:
            raise TrainingError(f"Learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise TrainingError("Adam needs betas in [0, 1) and a positive eps")
        return self


def adam_step(params, grads, state, cfg, t):
    """
    One bias-corrected Adam update, in place.

    ``params``/``grads`` map names to arrays, ``state`` holds the ``m`` and
    ``v`` moment dicts. A non-finite gradient aborts before any parameter
    or moment is touched.
    """
    if t < 1:
        raise TrainingError(f"Adam step counter must be >= 1, got {t}")
    for name, grad in grads.items():
        if grad.shape != params[name].shape:
            raise TrainingError(f"Gradient for {name} has shape {grad.shape}, parameter has {params[name].shape}")
        if not np.all(np.isfinite(grad)):
            logger.error(f"Non-finite gradient for {name} at step {t}")
            raise DivergenceError(f"Non-finite gradient for parameter {name} at step {t}")

    m_state, v_state = state.setdefault('m', {}), state.setdefault('v', {})
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, param in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(param)
        if name not in m_state:
            m_state[name] = np.zeros_like(param)
            v_state[name] = np.zeros_like(param)
        m, v = m_state[name], v_state[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        param -= (cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(param.dtype)


class Adam:
    """Adam over a model's named parameters; gradients are read from ``Tensor.grad``"""

    def __init__(self, named_parameters, config=None):
        self.config = (config or AdamConfig()).validate()
        self.params = dict(named_parameters)
        self.state = {'m': {}, 'v': {}}
        self.t = 0

    def zero_grad(self):
        for param in self.params.values():
            param.zero_grad()

    def step(self):
        grads = {name: param.grad for name, param in self.params.items() if param.grad is not None}
        arrays = {name: param.data for name, param in self.params.items()}
        adam_step(arrays, grads, self.state, self.config, self.t + 1)
        self.t += 1

    def moments(self):
        """Moment buffers named ``adam.m.<param>`` / ``adam.v.<param>`` in parameter order"""
        named = {}
        for kind in ('m', 'v'):
            for name in self.params:
                if name in self.state[kind]:
                    named[f"adam.{kind}.{name}"] = self.state[kind][name]
        return named

    def load_moments(self, tensors, t):
        state = {'m': {}, 'v': {}}
        for key, values in tensors.items():
            _, kind, name = key.split('.', 2)
            if name not in self.params:
                raise TrainingError(f"Optimizer state for unknown parameter {name}")
            if values.shape != self.params[name].shape:
                raise TrainingError(f"Optimizer state for {name} has shape {values.shape}")
            state[kind][name] = np.array(values, dtype=self.params[name].dtype)
        self.state = state
        self.t = int(t)
