import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from defian.metrics import gaussian_window, luminance, psnr, ssim


def test_luminance_anchors():
    assert luminance(np.full((1, 1, 3), 255.0))[0, 0] == pytest.approx(235.0, abs=0.5)
    assert luminance(np.zeros((1, 1, 3)))[0, 0] == pytest.approx(16.0, abs=0.5)
    assert luminance(np.full((1, 1, 3), 128.0))[0, 0] == pytest.approx(16 + 0.8588 * 128, abs=0.01)


def test_psnr_closed_forms():
    a = np.full((8, 8), 100.0)
    assert psnr(a, a) == math.inf
    assert psnr(np.zeros((8, 8)), np.full((8, 8), 255.0)) == pytest.approx(0.0)
    assert psnr(a, a + 1) == pytest.approx(20 * math.log10(255), abs=1e-9)
    assert psnr(a, a + 1) == pytest.approx(48.13, abs=0.01)


def test_psnr_rgb_uses_luminance_and_crop():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 256, (20, 20, 3)).astype(np.uint8)
    b = a.copy()
    b[0, 0] = 255 - b[0, 0]
    assert psnr(a, b, crop=2) == math.inf
    assert psnr(a, b) < math.inf
    with pytest.raises(ValueError, match="differ"):
        psnr(a, b[:-1])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000))
def test_psnr_symmetric_and_monotone_in_noise(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(50, 200, (16, 16))
    noise = rng.uniform(-1, 1, a.shape)
    values = [psnr(a, a + amp * noise) for amp in (0.5, 1, 2, 4, 8)]
    assert all(x > y for x, y in zip(values, values[1:]))
    assert psnr(a, a + noise) == psnr(a + noise, a)


def test_gaussian_window():
    g = gaussian_window()
    assert g.shape == (11,) and g.sum() == pytest.approx(1.0) and np.argmax(g) == 5


def windowed_ssim(a, b, k1=0.01, k2=0.03, L=255.0):
    """Explicit loop over every fully contained 11x11 window."""
    w = np.outer(gaussian_window(), gaussian_window())
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    vals = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            pa, pb = a[i : i + 11, j : j + 11], b[i : i + 11, j : j + 11]
            ma, mb = np.sum(w * pa), np.sum(w * pb)
            va, vb = np.sum(w * (pa - ma) ** 2), np.sum(w * (pb - mb) ** 2)
            cov = np.sum(w * (pa - ma) * (pb - mb))
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def checkerboard(n=24, cell=3):
    idx = np.indices((n, n)) // cell
    return np.where(idx.sum(0) % 2, 255.0, 0.0)


def test_ssim_negative_pattern_and_oracle():
    a = checkerboard()
    neg = 255.0 - a
    value = ssim(a, neg)
    assert value < 0
    assert value == pytest.approx(windowed_ssim(a, neg), abs=1e-9)


def test_ssim_random_vs_oracle():
    rng = np.random.default_rng(1)
    a = rng.uniform(0, 255, (17, 19))
    b = np.clip(a + rng.normal(0, 20, a.shape), 0, 255)
    assert ssim(a, b) == pytest.approx(windowed_ssim(a, b), abs=1e-9)


def test_ssim_constant_images_terms():
    t = ssim(np.full((12, 12), 50.0), np.full((12, 12), 200.0), return_terms=True)
    assert t.luminance < 1
    assert t.structure == pytest.approx(1.0)


def test_ssim_identity_and_errors():
    a = np.random.default_rng(2).uniform(0, 255, (14, 14, 3))
    assert ssim(a, a) == pytest.approx(1.0)
    with pytest.raises(ValueError, match="11"):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))
    with pytest.raises(ValueError):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000))
def test_ssim_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0, 255, (2, 13, 15))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1 <= ssim(a, b) <= 1
