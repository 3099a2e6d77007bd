"""
Parameter containers.

A ``Module`` registers every trainable Tensor, buffer and child module
assigned to it, so ``named_parameters()`` walks the network in
construction order and gives every tensor a stable dotted name. Those
names are the keys of checkpoints and optimizer state.
"""
import logging
from collections import OrderedDict

import numpy as np

from apps.tensors.tensor import Tensor, get_dtype

from .exceptions import ConfigError

logger = logging.getLogger(__name__)


def parameter(values):
    return Tensor(values, requires_grad=True)


def he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return parameter(rng.uniform(-bound, bound, size=shape))


def zeros_param(shape):
    return parameter(np.zeros(shape))


def ones_param(shape):
    return parameter(np.ones(shape))


class Module:
    def __init__(self):
        object.__setattr__(self, '_parameters', OrderedDict())
        object.__setattr__(self, '_buffers', OrderedDict())
        object.__setattr__(self, '_modules', OrderedDict())
        object.__setattr__(self, 'training', True)

    def __setattr__(self, name, value):
        for registry in (self._parameters, self._modules):
            if name in registry and not isinstance(value, (Module, Tensor)):
                del registry[name]
        if isinstance(value, Module):
            self._parameters.pop(name, None)
            self._modules[name] = value
        elif isinstance(value, Tensor) and value.requires_grad:
            self._modules.pop(name, None)
            self._parameters[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, values):
        array = np.array(values, dtype=get_dtype())
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_modules(self, prefix=''):
        yield prefix, self
        for name, child in self._modules.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix=''):
        for module_name, module in self.named_modules(prefix):
            for name, param in module._parameters.items():
                yield (f"{module_name}.{name}" if module_name else name), param

    def named_buffers(self, prefix=''):
        for module_name, module in self.named_modules(prefix):
            for name, buffer in module._buffers.items():
                yield (f"{module_name}.{name}" if module_name else name), buffer

    def parameters(self):
        return [param for _, param in self.named_parameters()]

    def param_count(self):
        return int(sum(param.size for param in self.parameters()))

    def zero_grad(self):
        for param in self.parameters():
            param.zero_grad()

    def train(self, mode=True):
        for _, module in self.named_modules():
            object.__setattr__(module, 'training', mode)
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self):
        """Parameters then buffers, as copies, keyed by dotted name"""
        state = OrderedDict()
        for name, param in self.named_parameters():
            state[name] = param.data.copy()
        for name, buffer in self.named_buffers():
            state[name] = buffer.copy()
        return state

    def load_state_dict(self, state):
        """Copy values in place; names and shapes must match exactly"""
        targets = OrderedDict((name, param.data) for name, param in self.named_parameters())
        targets.update(self.named_buffers())
        missing = [name for name in targets if name not in state]
        unexpected = [name for name in state if name not in targets]
        if missing or unexpected:
            raise ConfigError(
                f"State does not match model: missing {missing[:5]}, unexpected {unexpected[:5]}"
            )
        for name, target in targets.items():
            values = np.asarray(state[name])
            if values.shape != target.shape:
                raise ConfigError(f"Shape mismatch for {name}: {values.shape} vs {target.shape}")
            target[...] = values
        logger.debug(f"Loaded {len(targets)} tensors into {type(self).__name__}")


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        for module in modules:
            self.append(module)

    def append(self, module):
        setattr(self, str(len(self._modules)), module)

    def __getitem__(self, index):
        return list(self._modules.values())[index]

    def __setitem__(self, index, module):
        setattr(self, list(self._modules)[index], module)

    def __len__(self):
        return len(self._modules)

    def __iter__(self):
        return iter(self._modules.values())
