"""PSNR and SSIM on the BT.601 luminance plane."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d


def luminance(img: np.ndarray) -> np.ndarray:
    """Studio-range Y in [16, 235] from (h, w, 3) RGB with 0..255 values."""
    rgb = np.asarray(img, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"luminance expects (h, w, 3) RGB, got shape {rgb.shape}")
    return 16.0 + (65.738 * rgb[..., 0] + 129.057 * rgb[..., 1] + 25.064 * rgb[..., 2]) / 256.0


def _plane(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img)
    return luminance(arr) if arr.ndim == 3 else arr.astype(np.float64)


def _prepare(a, b, crop: int) -> tuple[np.ndarray, np.ndarray]:
    a, b = _plane(a), _plane(b)
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")
    if crop:
        if min(a.shape) <= 2 * crop:
            raise ValueError(f"cannot crop {crop} pixels from each border of a {a.shape} image")
        a, b = a[crop:-crop, crop:-crop], b[crop:-crop, crop:-crop]
    return a, b


def psnr(a, b, crop: int = 0) -> float:
    """Peak signal-to-noise ratio in dB with peak 255; ``math.inf`` for identical inputs.

    RGB inputs are reduced to luminance first; 2-D inputs are used as is.
    ``crop`` removes that many pixels from every border.
    """
    a, b = _prepare(a, b, crop)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


@dataclass(frozen=True)
class SsimTerms:
    ssim: float
    luminance: float  # mean of the luminance comparison map
    structure: float  # mean of the contrast-structure map


def _valid_filter(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    half = len(g) // 2
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return out[half : img.shape[0] - half, half : img.shape[1] - half]


def ssim(a, b, crop: int = 0, return_terms: bool = False, k1: float = 0.01, k2: float = 0.03, peak: float = 255.0):
    """Single-scale SSIM averaged over all fully contained 11x11 Gaussian windows."""
    a, b = _prepare(a, b, crop)
    if min(a.shape) < 11:
        raise ValueError(f"SSIM needs both dimensions >= 11, got {a.shape}")
    g = gaussian_window()
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    mu_a, mu_b = _valid_filter(a, g), _valid_filter(b, g)
    var_a = _valid_filter(a * a, g) - mu_a**2
    var_b = _valid_filter(b * b, g) - mu_b**2
    cov = _valid_filter(a * b, g) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    value = float(np.mean(lum * cs))
    if return_terms:
        return SsimTerms(value, float(np.mean(lum)), float(np.mean(cs)))
    return value
