import threading
from collections import defaultdict
from contextlib import contextmanager

_local = threading.local()


class FlopCounter:
    """Multiply-add FLOPs (2 per MAC) of matmul and conv2d calls"""

    def __init__(self):
        self.total = 0
        self.by_op = defaultdict(int)

    def add(self, op, flops):
        self.total += flops
        self.by_op[op] += flops


@contextmanager
def count_flops():
    counter = FlopCounter()
    stack = getattr(_local, 'stack', None)
    if stack is None:
        stack = []
        _local.stack = stack
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.pop()


def record_flops(op, flops):
    for counter in getattr(_local, 'stack', None) or ():
        counter.add(op, int(flops))
