"""
Reverse-mode differentiation over a recorded computation tape.

Ops record a node on the tape active on the current thread whenever one
of their inputs requires a gradient. Nodes are appended in execution
order, so the tape is topologically sorted by construction and backward
is a single reverse sweep.
"""
import logging
import threading
import weakref

import numpy as np

from .exceptions import TapeError

logger = logging.getLogger(__name__)

_local = threading.local()


class TapeNode:
    __slots__ = ('function', 'inputs', 'output_ref')

    def __init__(self, function, inputs, output):
        self.function = function
        self.inputs = inputs
        self.output_ref = weakref.ref(output)

    @property
    def op(self):
        return self.function.name


class GradTape:
    """
    Ordered record of differentiable ops.

    Usage::

        with GradTape() as tape:
            loss = total_loss(model(images), masks, loss_config)
            tape.backward(loss)

    Gradients accumulate on leaf tensors across backward calls until they
    are zeroed by the caller.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, function, inputs, output):
        node_id = len(self.nodes)
        self.nodes.append(TapeNode(function, tuple(inputs), output))
        output.node_id = node_id
        output._tape = self
        return node_id

    def reset(self):
        self.nodes = []

    def backward(self, loss):
        if loss.data.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.node_id is None or loss._tape is not self:
            raise TapeError("Loss is not recorded on this tape (detached tensor)")

        grads = {loss.node_id: np.ones_like(loss.data)}
        for node_id in range(loss.node_id, -1, -1):
            grad = grads.pop(node_id, None)
            if grad is None:
                continue
            node = self.nodes[node_id]
            output = node.output_ref()
            if output is not None and output.requires_grad:
                output.grad = grad if output.grad is None else output.grad + grad

            input_grads = node.function.backward(grad)
            for tensor, input_grad in zip(node.inputs, input_grads):
                if tensor is None or input_grad is None or not tensor.requires_grad:
                    continue
                if tensor._tape is self and tensor.node_id is not None:
                    previous = grads.get(tensor.node_id)
                    grads[tensor.node_id] = input_grad if previous is None else previous + input_grad
                else:
                    tensor.accumulate_grad(input_grad)

        logger.debug(f"Backward swept {loss.node_id + 1} tape nodes")


def _tape_stack():
    stack = getattr(_local, 'stack', None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def backward(loss):
    """Materialize d(loss)/d(t) for every requires_grad tensor feeding ``loss``"""
    tape = getattr(loss, '_tape', None)
    if tape is None:
        raise TapeError("Loss is not recorded on any tape (detached tensor)")
    tape.backward(loss)
