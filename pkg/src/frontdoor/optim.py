"""SGD with momentum plus the two learning-rate schedules used by the harness."""

from __future__ import annotations

import math

import numpy as np


class NonFiniteGradient(RuntimeError):
    pass


class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient.

    Update rule per parameter:
        v <- momentum * v + (grad + weight_decay * param)
        param <- param - lr * v
    """

    def __init__(self, params, lr, momentum=0.9, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradient("non-finite gradient in sgd step")
            g = p.grad + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= self.lr * v

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def schedule_lr(schedule, base_lr, epoch, total_epochs, step_every=20, gamma=0.1):
    """Learning rate for a given 0-based epoch.

    'step' multiplies by gamma after every ``step_every`` epochs; 'cosine'
    anneals from base_lr to 0 over the run.
    """
    if schedule == "step":
        return base_lr * gamma ** (epoch // step_every)
    if schedule == "cosine":
        return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / max(1, total_epochs)))
    raise ValueError(f"unknown schedule {schedule!r}")
