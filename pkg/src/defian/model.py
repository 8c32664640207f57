"""RCAB, the feature extraction chain, the attention module and the full network."""

from __future__ import annotations

import numpy as np

from . import nn
from .autograd import DiffNode, add, as_node, broadcast_to, mean, mul, relu, reshape, sigmoid, sub
from .config import ModelConfig
from .dac import DAC
from .diendec import DiEnDec, DiEnDecConfig
from .hessian import MSHF
from .nn import Conv2d, ConvSpec, Linear, Module, global_avg_pool, pixel_shuffle


class RCAB(Module):
    """Residual channel attention block: ``x + fe(x) * ca(fe(x))``."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 16):
        self.channels = channels
        self.conv1 = Conv2d(ConvSpec(3, channels, channels), rng)
        self.conv2 = Conv2d(ConvSpec(3, channels, channels), rng)
        hidden = max(1, channels // reduction)
        self.ca_fc1 = Linear(channels, hidden, rng)
        self.ca_fc2 = Linear(hidden, channels, rng)

    def features(self, x) -> DiffNode:
        return self.conv2(relu(self.conv1(x)))

    def channel_attention(self, fe) -> DiffNode:
        n, c = fe.shape[:2]
        pooled = reshape(global_avg_pool(fe), (n, c))
        return sigmoid(self.ca_fc2(relu(self.ca_fc1(pooled))))

    def forward(self, x) -> DiffNode:
        x = as_node(x)
        if x.shape[1] != self.channels:
            raise ValueError(f"RCAB expects {self.channels} channels, got {x.shape[1]}")
        fe = self.features(x)
        ca = self.channel_attention(fe)
        n, c = ca.shape
        return add(x, mul(fe, reshape(ca, (n, c, 1, 1))))

    def macs(self, h: int, w: int) -> int:
        return self.conv1.macs(h, w) + self.conv2.macs(h, w) + self.ca_fc1.macs() + self.ca_fc2.macs()


class FEM(Module):
    def __init__(self, channels: int, n_blocks: int, rng: np.random.Generator, reduction: int = 16):
        self.blocks = [RCAB(channels, rng, reduction) for _ in range(n_blocks)]

    def forward(self, x) -> DiffNode:
        x = as_node(x)
        for block in self.blocks:
            x = block(x)
        return x

    def macs(self, h: int, w: int) -> int:
        return sum(b.macs(h, w) for b in self.blocks)


class DeFiAM(Module):
    """``y = x + fem(x) * sigmoid(dac(diendec(mshf(fem(x))), x))`` with ablation switches.

    Disabled components are bypassed: without the Hessian bank the encoder
    sees the channel mean of ``fem(x)`` repeated; without the encoder the
    channel mean of its input is used; without alignment the one-channel map
    is broadcast over channels.  With all three off the gate is 1.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        c = cfg.channels
        self.cfg = cfg
        self.fem = FEM(c, cfg.n_blocks, rng, cfg.ca_reduction)
        self.n_maps = len(cfg.mshf_scales) if cfg.use_mshf else 3
        self.mshf = MSHF(c, cfg.mshf_scales) if cfg.use_mshf else None
        self.diendec = DiEnDec(DiEnDecConfig(in_channels=self.n_maps, width=cfg.diendec_width), rng) if cfg.use_diendec else None
        self.dac = DAC(c, rng, cfg.dac_reduction) if cfg.use_dac else None

    def attention(self, x_hat, x) -> DiffNode | None:
        if not self.cfg.has_attention:
            return None
        n, c, h, w = x_hat.shape
        if self.mshf is not None:
            lam = self.mshf(x_hat)
        else:
            lam = broadcast_to(mean(x_hat, axis=1, keepdims=True), (n, self.n_maps, h, w))
        v = self.diendec(lam) if self.diendec is not None else mean(lam, axis=1, keepdims=True)
        pre = self.dac(v, x) if self.dac is not None else broadcast_to(v, (n, c, h, w))
        return sigmoid(pre)

    def forward(self, x, attention=None) -> DiffNode:
        """``attention`` overrides the learned gate (a scalar or an array broadcastable to x)."""
        x = as_node(x)
        x_hat = self.fem(x)
        a = self.attention(x_hat, x) if attention is None else as_node(attention)
        if a is None:
            return add(x, x_hat)
        return add(x, mul(x_hat, a))

    def macs(self, h: int, w: int) -> int:
        total = self.fem.macs(h, w)
        if self.mshf is not None:
            total += self.mshf.macs(h, w)
        if self.diendec is not None:
            total += self.diendec.macs(h, w)
        if self.dac is not None:
            total += self.dac.macs()
        return total


def upscale_stages(scale: int) -> list[int]:
    return {2: [2], 3: [3], 4: [2, 2]}[scale]


class DeFiAN(Module):
    """Head conv, N attention modules with a global skip, pixel-shuffle upsampler, tail conv.

    Inputs are RGB in [0, 1]; the configured mean is subtracted on entry and
    added back on exit.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        c = cfg.channels
        self.cfg = cfg
        self.head = Conv2d(ConvSpec(3, 3, c), rng)
        self.body = [DeFiAM(cfg, rng) for _ in range(cfg.n_modules)]
        self.upsampler = [Conv2d(ConvSpec(3, c, c * r * r), rng) for r in upscale_stages(cfg.scale)]
        self.tail = Conv2d(ConvSpec(3, c, 3), rng)

    def _mean(self, dtype) -> np.ndarray:
        return np.asarray(self.cfg.rgb_mean, dtype=dtype).reshape(1, 3, 1, 1)

    def forward(self, lr_image, attention=None) -> DiffNode:
        lr_image = as_node(lr_image)
        if lr_image.value.ndim != 4 or lr_image.shape[1] != 3:
            raise ValueError(f"DeFiAN expects an RGB (n, 3, h, w) input, got shape {lr_image.shape}")
        rgb_mean = self._mean(lr_image.dtype)
        head = self.head(sub(lr_image, rgb_mean))
        x = head
        for module in self.body:
            x = module(x, attention=attention)
        x = add(x, head)
        for conv, r in zip(self.upsampler, upscale_stages(self.cfg.scale)):
            x = pixel_shuffle(conv(x), r)
        return add(self.tail(x), rgb_mean)

    def named_state(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise ValueError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} does not match model {p.shape}")
            p.value = value.astype(p.value.dtype, copy=True)


def build_model(cfg: ModelConfig, seed: int = 0) -> DeFiAN:
    return DeFiAN(cfg, seed)


def count_params(model: Module) -> int:
    """Trainable elements plus the fixed Hessian filter bank, as reported in #Params."""
    return nn.count_params(model, include_frozen=True)


def count_params_for(cfg: ModelConfig) -> int:
    """Parameter count derived from the configuration alone, without allocating weights."""
    c, s = cfg.channels, cfg.scale
    conv = lambda cin, cout: 9 * cin * cout + cout  # noqa: E731
    fc = lambda i, o: i * o + o  # noqa: E731
    hidden = max(1, c // cfg.ca_reduction)
    rcab = 2 * conv(c, c) + fc(c, hidden) + fc(hidden, c)
    module = cfg.n_blocks * rcab
    n_maps = len(cfg.mshf_scales) if cfg.use_mshf else 3
    if cfg.use_mshf:
        module += len(cfg.mshf_scales) * 3 * 10 * c
    if cfg.use_diendec:
        wd = cfg.diendec_width
        module += conv(n_maps, wd) + 4 * conv(wd, wd) + conv(wd, 1)
    if cfg.use_dac:
        h = max(1, c // cfg.dac_reduction)
        module += 2 * (fc(c, h) + fc(h, c))
    ups = sum(conv(c, c * r * r) for r in upscale_stages(s))
    return conv(3, c) + cfg.n_modules * module + ups + conv(c, 3)


def count_flops(model: DeFiAN, image_size: tuple[int, int] = (360, 480)) -> int:
    """Multiply-accumulates for producing one ``image_size`` (h, w) RGB output.

    The input is the ``1/scale`` low-resolution image.  Convolutions,
    deconvolutions, the depthwise Hessian stencils and fully connected layers
    are counted; element-wise work is not.
    """
    s = model.cfg.scale
    h, w = image_size[0] // s, image_size[1] // s
    total = model.head.macs(h, w)
    total += sum(m.macs(h, w) for m in model.body)
    for conv, r in zip(model.upsampler, upscale_stages(s)):
        total += conv.macs(h, w)
        h, w = h * r, w * r
    return total + model.tail.macs(h, w)
