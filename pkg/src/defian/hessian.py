"""Closed-form maximum-eigenvalue Hessian filtering at several stencil scales.

The stencils at scale ``ker`` are the 3-tap second-difference operators
spread out with zero gaps, i.e. dilated by ``(ker - 1) // 2``::

    ker=3: hh row [1, -2, 1]              hv = outer([1, 0, -1], [1, 0, -1])
    ker=5: hh row [1, 0, -2, 0, 1]        hv = outer([1, 0, 0, 0, -1], ...)
    ker=7: hh row [1, 0, 0, -2, 0, 0, 1]  hv = outer([1, 0, 0, 0, 0, 0, -1], ...)

All of them are invariant under a 180 degree rotation, so correlation and
convolution agree.  Borders are zero padded.
"""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autograd import DiffNode, as_node, concat, make_node, mean
from .nn import Module, stencil2d

SUPPORTED_SCALES = (3, 5, 7)


@dataclass(frozen=True)
class HessianKernelSet:
    ker: int
    g_hh: np.ndarray = field(repr=False)
    g_vv: np.ndarray = field(repr=False)
    g_hv: np.ndarray = field(repr=False)


def kernel_set(ker: int) -> HessianKernelSet:
    if ker not in SUPPORTED_SCALES:
        raise ValueError(f"unsupported Hessian scale {ker}; supported scales are {SUPPORTED_SCALES}")
    c = ker // 2
    hh = np.zeros((ker, ker))
    hh[c, 0], hh[c, c], hh[c, -1] = 1.0, -2.0, 1.0
    edge = np.zeros(ker)
    edge[0], edge[-1] = 1.0, -1.0
    return HessianKernelSet(ker, hh, hh.T.copy(), np.outer(edge, edge))


def hessian_gradients(x, ks: HessianKernelSet, check_size: bool = True):
    """Second-derivative responses ``(g_hh, g_vv, g_hv)``, channel by channel."""
    x = as_node(x)
    if x.value.ndim != 4:
        raise ValueError(f"expected (n, c, h, w) input, got shape {x.shape}")
    h, w = x.shape[2:]
    if check_size and (h < ks.ker or w < ks.ker):
        raise ValueError(f"input {h}x{w} is smaller than the {ks.ker}x{ks.ker} Hessian stencil")
    return stencil2d(x, ks.g_hh), stencil2d(x, ks.g_vv), stencil2d(x, ks.g_hv)


def max_eigenvalue(g_hh, g_vv, g_hv) -> DiffNode:
    """Larger eigenvalue of ``[[g_hh, g_hv], [g_hv, g_vv]]`` at every pixel.

    Uses trace/2 + sqrt(disc)/2 with ``disc = (g_hh - g_vv)^2 + 4 g_hv^2``.
    Where ``disc`` is zero the square-root term contributes no gradient.
    """
    a, b, c = as_node(g_hh), as_node(g_vv), as_node(g_hv)
    if not a.shape == b.shape == c.shape:
        raise ValueError(f"gradient shapes differ: {a.shape}, {b.shape}, {c.shape}")
    diff = a.value - b.value
    root = np.sqrt(np.maximum(diff * diff + 4 * c.value * c.value, 0))
    lam = 0.5 * (a.value + b.value) + 0.5 * root

    def _back(g):
        nz = root > 0
        inv = np.where(nz, 1.0 / np.where(nz, root, 1), 0).astype(g.dtype)
        half = 0.5 * g
        return half + half * diff * inv, half - half * diff * inv, 2 * g * c.value * inv

    return make_node(lam, (a, b, c), _back)


def scaled_hessian_filter(x, ker: int) -> DiffNode:
    return max_eigenvalue(*hessian_gradients(x, kernel_set(ker)))


def mshf(x, scales: Sequence[int] = SUPPORTED_SCALES) -> DiffNode:
    """Channel-averaged eigenvalue maps, one output channel per scale in the given order."""
    if not scales:
        raise ValueError("mshf needs at least one scale")
    maps = [mean(scaled_hessian_filter(x, k), axis=1, keepdims=True) for k in scales]
    return maps[0] if len(maps) == 1 else concat(maps, axis=1)


class MSHF(Module):
    """Fixed multi-scale Hessian filter bank.

    Each scale is equivalent to three depthwise dilated 3x3 layers (hh, vv,
    hv) with bias over ``channels`` inputs; that layout is what
    :meth:`frozen_numel` reports toward the parameter count.  Nothing here is
    trainable.
    """

    def __init__(self, channels: int, scales: Sequence[int] = SUPPORTED_SCALES):
        for k in scales:
            kernel_set(k)
        if not scales:
            raise ValueError("mshf needs at least one scale")
        self.channels = channels
        self.scales = tuple(scales)

    def forward(self, x):
        return mshf(x, self.scales)

    def frozen_numel(self) -> int:
        return len(self.scales) * 3 * (9 * self.channels + self.channels)

    def macs(self, h: int, w: int) -> int:
        return len(self.scales) * 3 * 9 * self.channels * h * w


# eigen-solver oracle and benchmark ------------------------------------------------------


def eig_oracle(g_hh, g_vv, g_hv, which: str = "max", per_pixel: bool = False) -> np.ndarray:
    """Eigenvalues of the per-pixel symmetric 2x2 Hessian via LAPACK.

    ``per_pixel=True`` calls the solver once per pixel, mirroring a pixel-wise
    eigen decomposition; otherwise all matrices go through one batched call.
    """
    a, b, c = (np.asarray(getattr(t, "value", t), dtype=np.float64) for t in (g_hh, g_vv, g_hv))
    mats = np.empty(a.shape + (2, 2))
    mats[..., 0, 0], mats[..., 1, 1] = a, b
    mats[..., 0, 1] = mats[..., 1, 0] = c
    col = {"max": 1, "min": 0}[which]
    if not per_pixel:
        return np.linalg.eigvalsh(mats)[..., col]
    flat = mats.reshape(-1, 2, 2)
    out = np.empty(len(flat))
    for i, m in enumerate(flat):
        out[i] = np.linalg.eigvalsh(m)[col]
    return out.reshape(a.shape)


def _time(fn, reps: int) -> list[float]:
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return times


def bench_eigen(
    sizes: Iterable[tuple[int, int, int]],
    reps: int = 5,
    ker: int = 3,
    seed: int = 0,
    tol: float = 1e-5,
) -> list[dict]:
    """Time closed-form filtering against the pixel-wise eigen solver.

    Both paths share the stencil responses; each size is checked for
    agreement within ``tol`` before it is timed.  Returns one row per
    (size, method) with ``mean_ms`` and ``stddev_ms``.
    """
    ks = kernel_set(ker)
    rng = np.random.default_rng(seed)
    rows = []
    for c, h, w in sizes:
        x = rng.standard_normal((1, c, h, w))

        def closed_form():
            return max_eigenvalue(*hessian_gradients(x, ks, check_size=False)).value

        def solver():
            return eig_oracle(*hessian_gradients(x, ks, check_size=False), per_pixel=True)

        err = float(np.max(np.abs(closed_form() - solver())))
        if err > tol:
            raise AssertionError(f"closed form and eigen solver disagree by {err:.3g} at size {(c, h, w)}")
        for method, fn in (("closed_form", closed_form), ("eig_solver", solver)):
            t = _time(fn, reps)
            rows.append(
                {
                    "size": f"{c}x{h}x{w}",
                    "method": method,
                    "mean_ms": statistics.fmean(t),
                    "stddev_ms": statistics.stdev(t) if len(t) > 1 else 0.0,
                }
            )
    return rows


def bench_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["size", "method", "mean_ms", "stddev_ms"], lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({**row, "mean_ms": f"{row['mean_ms']:.6f}", "stddev_ms": f"{row['stddev_ms']:.6f}"})
    return buf.getvalue()


FIG8_SIZES = [(c, s, s) for c in (1, 4, 16, 64) for s in (1, 2, 4, 8)]
