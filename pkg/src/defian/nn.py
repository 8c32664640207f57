"""Convolution, deconvolution and the small layer zoo the network is built from."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .autograd import DiffNode, as_node, get_dtype, make_node


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a stride-1 (de)convolution.

    ``padding=None`` picks the size-preserving value ``dilation*(k-1)//2``.
    """

    kernel_size: int
    in_channels: int
    out_channels: int
    dilation: int = 1
    padding: int | None = None
    has_bias: bool = True

    def __post_init__(self):
        if self.kernel_size < 1 or self.dilation < 1:
            raise ValueError(f"invalid kernel_size/dilation in {self}")
        if self.padding is None:
            object.__setattr__(self, "padding", self.dilation * (self.kernel_size - 1) // 2)
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")

    @property
    def span(self) -> int:
        return self.dilation * (self.kernel_size - 1)

    def conv_out(self, size: int) -> int:
        return size + 2 * self.padding - self.span

    def deconv_out(self, size: int) -> int:
        return size - 2 * self.padding + self.span


# raw kernels ------------------------------------------------------------------
#
# conv weights are (out, in, k, k); the transposed map reuses the same array.


def _im2col(xp: np.ndarray, k: int, d: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i * d : i * d + ho, j * d : j * d + wo]
    return cols.reshape(n, c * k * k, ho * wo)


def _col2im(cols: np.ndarray, shape, k: int, d: int, p: int, ho: int, wo: int) -> np.ndarray:
    n, c, h, w = shape
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    cols = cols.reshape(n, c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            xp[:, :, i * d : i * d + ho, j * d : j * d + wo] += cols[:, :, i, j]
    return xp[:, :, p : p + h, p : p + w]


def conv_forward(x: np.ndarray, w: np.ndarray, dilation: int, padding: int) -> np.ndarray:
    n, _, h, wd = x.shape
    o, _, k, _ = w.shape
    ho = h + 2 * padding - dilation * (k - 1)
    wo = wd + 2 * padding - dilation * (k - 1)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, k, dilation, ho, wo)
    out = np.matmul(w.reshape(o, -1), cols)
    return out.reshape(n, o, ho, wo)


def conv_transpose(g: np.ndarray, w: np.ndarray, in_shape, dilation: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`conv_forward` with respect to its input."""
    n, o, ho, wo = g.shape
    k = w.shape[-1]
    cols = np.matmul(w.reshape(o, -1).T, g.reshape(n, o, ho * wo))
    return _col2im(cols, in_shape, k, dilation, padding, ho, wo)


def conv_weight_grad(x: np.ndarray, g: np.ndarray, k: int, dilation: int, padding: int) -> np.ndarray:
    n, c = x.shape[:2]
    o, ho, wo = g.shape[1:]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, k, dilation, ho, wo)
    gw = np.tensordot(g.reshape(n, o, ho * wo), cols, axes=([0, 2], [0, 2]))
    return gw.reshape(o, c, k, k)


# differentiable ops ---------------------------------------------------------------


def _check_conv(x: DiffNode, spec: ConvSpec, weights: DiffNode, bias, cin: int, cout: int, op: str):
    if x.value.ndim != 4:
        raise ValueError(f"{op}: expected a 4-D (n, c, h, w) input, got shape {x.shape}")
    if x.shape[1] != cin:
        raise ValueError(f"{op}: input has {x.shape[1]} channels, spec expects {cin}")
    k = spec.kernel_size
    expected = (spec.out_channels, spec.in_channels, k, k)
    if op == "deconv2d":
        expected = (spec.in_channels, spec.out_channels, k, k)
    if weights.shape != expected:
        raise ValueError(f"{op}: weight shape {weights.shape}, expected {expected}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"{op}: bias shape {bias.shape}, expected ({cout},)")


def conv2d(x, spec: ConvSpec, weights, bias=None) -> DiffNode:
    """Dilated cross-correlation (no kernel flip), stride 1."""
    x, weights = as_node(x), as_node(weights)
    bias = as_node(bias) if bias is not None else None
    _check_conv(x, spec, weights, bias, spec.in_channels, spec.out_channels, "conv2d")
    h, w = x.shape[2:]
    if spec.conv_out(h) < 1 or spec.conv_out(w) < 1:
        raise ValueError(f"conv2d: {h}x{w} input gives an empty output under {spec}")
    d, p, k = spec.dilation, spec.padding, spec.kernel_size
    out = conv_forward(x.value, weights.value, d, p)
    if bias is not None:
        out += bias.value[None, :, None, None]

    def _back(g):
        gx = conv_transpose(g, weights.value, x.shape, d, p) if x.requires_grad else None
        gw = conv_weight_grad(x.value, g, k, d, p) if weights.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weights) + ((bias,) if bias is not None else ())
    return make_node(out, parents, _back)


def deconv2d(x, spec: ConvSpec, weights, bias=None) -> DiffNode:
    """Transpose of :func:`conv2d`.

    ``weights`` has shape ``(in, out, k, k)``: it is the weight of the
    forward convolution mapping ``out`` channels to ``in`` channels, so that
    ``<conv2d(a, W), b> == <a, deconv2d(b, W)>``.
    """
    x, weights = as_node(x), as_node(weights)
    bias = as_node(bias) if bias is not None else None
    _check_conv(x, spec, weights, bias, spec.in_channels, spec.out_channels, "deconv2d")
    n, _, h, w = x.shape
    ho, wo = spec.deconv_out(h), spec.deconv_out(w)
    if ho < 1 or wo < 1:
        raise ValueError(f"deconv2d: {h}x{w} input gives an empty output under {spec}")
    d, p, k = spec.dilation, spec.padding, spec.kernel_size
    out = conv_transpose(x.value, weights.value, (n, spec.out_channels, ho, wo), d, p)
    if bias is not None:
        out = out + bias.value[None, :, None, None]

    def _back(g):
        gx = conv_forward(g, weights.value, d, p) if x.requires_grad else None
        gw = conv_weight_grad(g, x.value, k, d, p) if weights.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weights) + ((bias,) if bias is not None else ())
    return make_node(np.ascontiguousarray(out), parents, _back)


def stencil2d(x, kernel: np.ndarray) -> DiffNode:
    """Apply one fixed 2-D kernel to every channel (depthwise, zero padded, size preserving).

    Only the nonzero taps are visited, which keeps the sparse Hessian
    stencils cheap.
    """
    x = as_node(x)
    kernel = np.asarray(kernel)
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"stencil must have odd size, got {kernel.shape}")
    ph, pw = kh // 2, kw // 2
    h, w = x.shape[2:]
    taps = [(i, j, float(kernel[i, j])) for i in range(kh) for j in range(kw) if kernel[i, j] != 0]
    xp = np.pad(x.value, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros_like(x.value)
    for i, j, c in taps:
        out += c * xp[:, :, i : i + h, j : j + w]

    def _back(g):
        gp = np.zeros_like(xp)
        for i, j, c in taps:
            gp[:, :, i : i + h, j : j + w] += c * g
        return (gp[:, :, ph : ph + h, pw : pw + w],)

    return make_node(out, (x,), _back)


def linear(x, weights, bias=None) -> DiffNode:
    """Affine map on ``(n, in)`` rows with ``weights`` of shape ``(out, in)``."""
    x, weights = as_node(x), as_node(weights)
    bias = as_node(bias) if bias is not None else None
    if x.value.ndim != 2 or x.shape[1] != weights.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weights {weights.shape}")
    if bias is not None and bias.shape != (weights.shape[0],):
        raise ValueError(f"linear: bias {bias.shape} incompatible with weights {weights.shape}")
    out = x.value @ weights.value.T
    if bias is not None:
        out = out + bias.value

    def _back(g):
        gb = g.sum(axis=0) if bias is not None else None
        return g @ weights.value, g.T @ x.value, gb

    parents = (x, weights) + ((bias,) if bias is not None else ())
    return make_node(out, parents, _back)


def global_avg_pool(x) -> DiffNode:
    x = as_node(x)
    n, c, h, w = x.shape
    out = x.value.mean(axis=(2, 3), keepdims=True)
    return make_node(
        out, (x,), lambda g: (np.broadcast_to(g / (h * w), x.shape).astype(x.dtype),)
    )


def _shuffle(a: np.ndarray, s: int) -> np.ndarray:
    n, cs, h, w = a.shape
    c = cs // (s * s)
    return a.reshape(n, c, s, s, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * s, w * s)


def _unshuffle(a: np.ndarray, s: int) -> np.ndarray:
    n, c, hs, ws = a.shape
    h, w = hs // s, ws // s
    return a.reshape(n, c, h, s, w, s).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * s * s, h, w)


def pixel_shuffle(x, s: int) -> DiffNode:
    """Depth-to-space: ``(n, c*s*s, h, w) -> (n, c, s*h, s*w)``."""
    x = as_node(x)
    if s < 1 or x.shape[1] % (s * s):
        raise ValueError(f"pixel_shuffle: {x.shape[1]} channels not divisible by {s}^2")
    return make_node(_shuffle(x.value, s), (x,), lambda g: (_unshuffle(g, s),))


def pixel_unshuffle(x, s: int) -> DiffNode:
    x = as_node(x)
    if s < 1 or x.shape[2] % s or x.shape[3] % s:
        raise ValueError(f"pixel_unshuffle: spatial size {x.shape[2:]} not divisible by {s}")
    return make_node(_unshuffle(x.value, s), (x,), lambda g: (_shuffle(g, s),))


# modules ------------------------------------------------------------------------------


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(get_dtype())


class Module:
    """Minimal parameter container: walks attributes for parameters and submodules."""

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (DiffNode, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (DiffNode, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, DiffNode]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, DiffNode):
                if value.requires_grad:
                    yield full, value
            else:
                yield from value.named_parameters(full + ".")

    def parameters(self) -> list[DiffNode]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def frozen_numel(self) -> int:
        """Element count of fixed (non-trainable) weights owned by this module alone."""
        return 0

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


class Conv2d(Module):
    def __init__(self, spec: ConvSpec, rng: np.random.Generator):
        self.spec = spec
        k = spec.kernel_size
        fan_in = spec.in_channels * k * k
        self.weight = DiffNode(
            kaiming_uniform(rng, (spec.out_channels, spec.in_channels, k, k), fan_in), True
        )
        self.bias = DiffNode(np.zeros(spec.out_channels, get_dtype()), True) if spec.has_bias else None

    def forward(self, x):
        return conv2d(x, self.spec, self.weight, self.bias)

    def macs(self, h: int, w: int) -> int:
        s = self.spec
        return s.in_channels * s.out_channels * s.kernel_size**2 * s.conv_out(h) * s.conv_out(w)


class Deconv2d(Module):
    def __init__(self, spec: ConvSpec, rng: np.random.Generator):
        self.spec = spec
        k = spec.kernel_size
        fan_in = spec.in_channels * k * k
        self.weight = DiffNode(
            kaiming_uniform(rng, (spec.in_channels, spec.out_channels, k, k), fan_in), True
        )
        self.bias = DiffNode(np.zeros(spec.out_channels, get_dtype()), True) if spec.has_bias else None

    def forward(self, x):
        return deconv2d(x, self.spec, self.weight, self.bias)

    def macs(self, h: int, w: int) -> int:
        s = self.spec
        return s.in_channels * s.out_channels * s.kernel_size**2 * s.deconv_out(h) * s.deconv_out(w)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        self.in_features, self.out_features = in_features, out_features
        self.weight = DiffNode(kaiming_uniform(rng, (out_features, in_features), in_features), True)
        self.bias = DiffNode(np.zeros(out_features, get_dtype()), True) if bias else None

    def forward(self, x):
        return linear(x, self.weight, self.bias)

    def macs(self) -> int:
        return self.in_features * self.out_features


def count_params(module: Module, include_frozen: bool = True) -> int:
    """Total element count of trainable tensors, plus fixed filter banks when asked."""
    total = sum(p.value.size for p in module.parameters())
    if include_frozen:
        total += sum(m.frozen_numel() for m in module.modules())
    return total
