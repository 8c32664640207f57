"""Distribution alignment: spread a one-channel map over C channels with learned statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import DiffNode, add, as_node, div, mean, mul, reshape, relu, sqrt, square, sub
from .nn import Linear, Module

EPS = 1e-5


@dataclass
class ChannelStats:
    """Per-sample, per-channel spatial mean and (population) standard deviation, shape (n, C)."""

    mu: DiffNode
    sigma: DiffNode


def channel_stats(x) -> ChannelStats:
    x = as_node(x)
    n, c = x.shape[:2]
    mu = mean(x, axis=(2, 3), keepdims=True)
    var = mean(square(sub(x, mu)), axis=(2, 3))
    return ChannelStats(reshape(mu, (n, c)), sqrt(var))


def normalize_observed(v, eps: float = EPS) -> DiffNode:
    """Standardize each sample of ``v`` over all its non-batch axes."""
    v = as_node(v)
    axes = tuple(range(1, v.value.ndim))
    mu = mean(v, axis=axes, keepdims=True)
    centered = sub(v, mu)
    var = mean(square(centered), axis=axes, keepdims=True)
    return div(centered, sqrt(add(var, eps)))


class DacParams(Module):
    """Two FC-ReLU-FC stacks (C -> C/r -> C) mapping reference mean and std to targets."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4):
        hidden = max(1, channels // reduction)
        self.channels = channels
        self.mu_fc1 = Linear(channels, hidden, rng)
        self.mu_fc2 = Linear(hidden, channels, rng)
        self.sigma_fc1 = Linear(channels, hidden, rng)
        self.sigma_fc2 = Linear(hidden, channels, rng)

    def forward(self, stats: ChannelStats) -> tuple[DiffNode, DiffNode]:
        mu_hat = self.mu_fc2(relu(self.mu_fc1(stats.mu)))
        sigma_hat = self.sigma_fc2(relu(self.sigma_fc1(stats.sigma)))
        return mu_hat, sigma_hat

    def macs(self) -> int:
        return sum(fc.macs() for fc in (self.mu_fc1, self.mu_fc2, self.sigma_fc1, self.sigma_fc2))


def align(v, x_ref, params: DacParams | None = None, eps: float = EPS) -> DiffNode:
    """Return ``normalize(v) * sigma_hat[c] + mu_hat[c]`` for every channel c of ``x_ref``.

    ``params=None`` passes the reference statistics through unchanged.
    """
    v, x_ref = as_node(v), as_node(x_ref)
    if v.value.ndim != 4 or v.shape[1] != 1:
        raise ValueError(f"observed map must be (n, 1, h, w), got {v.shape}")
    if (v.shape[0],) + v.shape[2:] != (x_ref.shape[0],) + x_ref.shape[2:]:
        raise ValueError(f"observed map {v.shape} and reference {x_ref.shape} disagree on n, h, w")
    n, c = x_ref.shape[:2]
    stats = channel_stats(x_ref)
    mu_hat, sigma_hat = (stats.mu, stats.sigma) if params is None else params(stats)
    v_tilde = normalize_observed(v, eps)
    return add(mul(v_tilde, reshape(sigma_hat, (n, c, 1, 1))), reshape(mu_hat, (n, c, 1, 1)))


class DAC(Module):
    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4, eps: float = EPS):
        self.params = DacParams(channels, rng, reduction)
        self.eps = eps

    def forward(self, v, x_ref) -> DiffNode:
        return align(v, x_ref, self.params, self.eps)

    def macs(self) -> int:
        return self.params.macs()
