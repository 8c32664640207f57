"""Dilated encoder-decoder fusing the Hessian maps into one full-resolution map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import DiffNode, relu, sum_
from .nn import Conv2d, ConvSpec, Deconv2d, Module


def arf(k: int, depth: int) -> int:
    """Accumulated receptive field ``1 + sum_{i=1..depth} (k-1)^i``."""
    if k < 3 or k % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 3, got {k}")
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    return 1 + sum((k - 1) ** i for i in range(1, depth + 1))


@dataclass(frozen=True)
class DiEnDecConfig:
    in_channels: int = 3
    width: int = 16
    out_channels: int = 1
    kernel_size: int = 3
    dilations: tuple[int, ...] = (1, 2, 4)


class DiEnDec(Module):
    """Dilated convs (1, 2, 4) then dilated deconvs (4, 2, 1); every layer keeps h x w.

    ReLU follows every layer except the last, whose output is the raw
    attention representation.
    """

    def __init__(self, cfg: DiEnDecConfig, rng: np.random.Generator):
        self.cfg = cfg
        k, c = cfg.kernel_size, cfg.width
        enc_io = [(cfg.in_channels, c)] + [(c, c)] * (len(cfg.dilations) - 1)
        dec_io = [(c, c)] * (len(cfg.dilations) - 1) + [(c, cfg.out_channels)]
        self.encoder = [Conv2d(ConvSpec(k, i, o, dilation=d), rng) for (i, o), d in zip(enc_io, cfg.dilations)]
        self.decoder = [
            Deconv2d(ConvSpec(k, i, o, dilation=d), rng) for (i, o), d in zip(dec_io, cfg.dilations[::-1])
        ]

    @property
    def layers(self) -> list[Module]:
        return self.encoder + self.decoder

    def forward(self, lam, upto: int | None = None) -> DiffNode:
        """Run the first ``upto`` layers (all by default)."""
        if lam.shape[1] != self.cfg.in_channels:
            raise ValueError(f"DiEnDec expects {self.cfg.in_channels} input channels, got {lam.shape[1]}")
        layers = self.layers if upto is None else self.layers[:upto]
        out = lam
        for i, layer in enumerate(layers):
            out = layer(out)
            if i < len(self.layers) - 1:
                out = relu(out)
        return out

    def macs(self, h: int, w: int) -> int:
        return sum(layer.macs(h, w) for layer in self.layers)


def receptive_field_probe(net: DiEnDec, out_pixel: tuple[int, int], size: tuple[int, int], depth: int | None = None) -> set[tuple[int, int]]:
    """Input pixels that can influence ``out_pixel`` after the first ``depth`` layers.

    The weights are temporarily replaced by their magnitudes (plus a small
    floor) and the input is all ones, so every ReLU stays active and the
    gradient support equals the structural receptive field.
    """
    saved = []
    for layer in net.layers:
        saved.append(layer.weight.value)
        layer.weight.value = np.abs(layer.weight.value) + 1e-3
    try:
        h, w = size
        x = DiffNode(np.ones((1, net.cfg.in_channels, h, w), dtype=saved[0].dtype), requires_grad=True)
        out = net(x, upto=depth)
        r, c = out_pixel
        sum_(out * _onehot(out.shape, r, c, out.dtype)).backward()
        grad = np.abs(x.grad).sum(axis=(0, 1))
    finally:
        for layer, value in zip(net.layers, saved):
            layer.weight.value = value
        net.zero_grad()
    return {(int(i), int(j)) for i, j in zip(*np.nonzero(grad))}


def _onehot(shape, r: int, c: int, dtype) -> np.ndarray:
    m = np.zeros(shape, dtype=dtype)
    m[:, :, r, c] = 1
    return m
