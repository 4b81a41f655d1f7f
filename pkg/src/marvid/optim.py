"""AdamW with decoupled weight decay and a warmup-then-cosine schedule."""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericError
from .tensor import Tensor


class AdamW:
    """Standard Adam moments with weight decay applied outside the update.

    lr is a plain attribute so a schedule can set it before each step().
    step() raises NumericError the moment any gradient goes non-finite;
    parameters without a gradient this step are left alone.
    """

    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 betas: tuple = (0.9, 0.95), eps: float = 1e-8,
                 weight_decay: float = 0.05):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient in parameter {i} at step {self.t}")
            m = self._m[i]
            v = self._v[i]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= self.lr * (update + self.weight_decay * p.data)


def warmup_cosine(step: int, total: int, base_lr: float, warmup: int) -> float:
    """Learning rate for 0-based step: linear ramp, then cosine down to 0.

    The ramp reaches base_lr at step warmup-1's update; the cosine hits 0
    exactly when step == total, so every real step keeps a positive rate.
    """
    if total <= 0:
        return base_lr
    if step < warmup:
        return base_lr * (step + 1) / warmup
    if total <= warmup:
        return base_lr
    progress = (step - warmup) / (total - warmup)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))
