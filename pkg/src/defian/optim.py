"""Adam with bias correction, plus global-norm gradient clipping."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autograd import DiffNode


class Adam:
    """Adam optimizer whose moment buffers persist across steps.

    The learning rate is passed per step so a schedule can drive it.
    """

    def __init__(self, params: Sequence[DiffNode], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            step = (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.value -= step.astype(p.value.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def adam_step(opt: Adam, lr: float) -> None:
    opt.step(lr)


def grad_norm(params: Sequence[DiffNode]) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params if p.grad is not None)))


def clip_grad_norm(params: Sequence[DiffNode], max_norm: float) -> float:
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``."""
    norm = grad_norm(params)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= p.grad.dtype.type(scale)
    return norm
