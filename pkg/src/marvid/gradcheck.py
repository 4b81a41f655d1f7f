"""Finite-difference verification of tape gradients.

This is the package's independent second route for every backward rule: the
analytic gradient from one taped backward pass is compared coordinate by
coordinate against central differences of the untaped forward function.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError
from .rng import Rng


def grad_check(f, x: T.Tensor, samples: int = 50, h: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between tape and numeric gradients of f at x.

    f maps a Tensor to a scalar Tensor and must be deterministic.  It runs
    once under a tape for the analytic gradient, then twice per sampled
    coordinate with no tape for the (f(x+h) - f(x-h)) / 2h probe.  Relative
    error is |a - n| / max(|a|, |n|, 1e-8); the max over min(samples, x.size)
    distinct coordinates is returned.

    x.data is perturbed in place and restored exactly, so f must read x
    afresh on every call rather than capturing x.data.
    """
    if not isinstance(x, T.Tensor) or not x.requires_grad:
        raise ContractError("grad_check needs a requires_grad Tensor to probe")
    x.grad = None
    with T.tape():
        y = f(x)
        if not isinstance(y, T.Tensor) or y.size != 1:
            raise ContractError("f must return a scalar Tensor")
        T.backward(y)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    aflat = analytic.reshape(-1)
    picks = Rng(seed).choice(x.size, min(int(samples), x.size), replace=False)
    worst = 0.0
    for i in picks:
        keep = flat[i]
        flat[i] = keep + h
        fp = f(x).item()
        flat[i] = keep - h
        fm = f(x).item()
        flat[i] = keep
        numeric = (fp - fm) / (2.0 * h)
        a = aflat[i]
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst
