"""SGD with momentum and the warmup + cosine learning-rate schedule."""

import math

import numpy as np

from .errors import ContractError

WARMUP_EPOCHS = 3


class SGD:
    """Momentum SGD: ``v = m*v + g + wd*p``; ``p -= lr * v``."""

    def __init__(self, params, lr, momentum=0.9, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [None] * len(self.params)

    def step(self):
        sgd_step(self.params, self.lr, self.momentum, self.weight_decay, self.velocity)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def sgd_step(params, lr, momentum=0.0, weight_decay=0.0, velocity=None):
    """Update ``params`` in place from their ``.grad``.

    ``velocity`` is a list parallel to ``params`` holding momentum buffers;
    it is filled on first use.
    """
    params = list(params)
    if velocity is None:
        velocity = [None] * len(params)
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractError(f"sgd_step: parameter {p.name or i} has no gradient")
        d = p.grad
        if weight_decay:
            d = d + weight_decay * p.data
        if momentum:
            velocity[i] = d.copy() if velocity[i] is None else momentum * velocity[i] + d
            d = velocity[i]
        p.data -= np.asarray(lr * d, dtype=p.dtype)
    return velocity


def lr_schedule(epoch, epochs, base_lr, warmup=WARMUP_EPOCHS):
    """Linear warmup ``base*(epoch+1)/warmup`` then cosine decay to 0.

    The cosine part spans the epochs after warmup; the last epoch gets
    exactly zero.
    """
    if epoch < warmup:
        return base_lr * (epoch + 1) / warmup
    span = epochs - warmup - 1
    if span <= 0:
        return 0.0 if epoch >= epochs - 1 else base_lr
    t = min(epoch - warmup, span) / span
    return 0.5 * base_lr * (1 + math.cos(math.pi * t))
