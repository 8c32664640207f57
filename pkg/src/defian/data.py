"""Image I/O, bicubic resampling, aligned patch sampling and the training image folder."""

from __future__ import annotations

import math
import queue
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .autograd import get_dtype

# images are (h, w, 3) uint8 arrays; network tensors are (n, 3, h, w) floats in [0, 1]


def read_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_png(path: str | Path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise TypeError(f"write_png expects uint8 pixels, got {img.dtype}")
    mode = "L" if img.ndim == 2 else "RGB"
    Image.fromarray(img, mode=mode).save(path, format="PNG")


def to_tensor(img: np.ndarray) -> np.ndarray:
    return (np.asarray(img, dtype=np.float64) / 255.0).transpose(2, 0, 1)[None].astype(get_dtype())


def to_image(t) -> np.ndarray:
    """First batch element of a [0, 1] tensor as rounded, clipped uint8 pixels."""
    arr = np.asarray(getattr(t, "value", t))[0].transpose(1, 2, 0)
    return np.clip(np.round(arr.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)


# bicubic ----------------------------------------------------------------------------


def keys_cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resize_matrix(in_len: int, out_len: int, scale: float, a: float = -0.5, antialias: bool = True) -> np.ndarray:
    """Dense ``(out_len, in_len)`` interpolation matrix with clamped edges.

    Output sample ``i`` sits at input coordinate ``(i + 0.5) / scale - 0.5``.
    When shrinking, the kernel is stretched by ``1 / scale`` to low-pass first.
    """
    stretch = 1.0 / scale if (antialias and scale < 1) else 1.0
    width = 4.0 * stretch
    centers = (np.arange(out_len) + 0.5) / scale - 0.5
    left = np.floor(centers - width / 2).astype(int) + 1
    taps = int(math.ceil(width)) + 1
    idx = left[:, None] + np.arange(taps)[None, :]
    weights = keys_cubic((centers[:, None] - idx) / stretch, a) / stretch
    weights /= weights.sum(axis=1, keepdims=True)
    mat = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(mat, (rows, np.clip(idx, 0, in_len - 1).ravel()), weights.ravel())
    return mat


def bicubic_resize(img: np.ndarray, scale: float | None = None, size: tuple[int, int] | None = None) -> np.ndarray:
    """Separable bicubic resize of an (h, w[, c]) image by ``scale`` or to ``size=(h, w)``.

    uint8 input gives rounded uint8 output; float input stays float.
    """
    img = np.asarray(img)
    h, w = img.shape[:2]
    if size is None:
        if scale is None:
            raise ValueError("give either scale or size")
        size = (max(1, math.ceil(h * scale - 1e-9)), max(1, math.ceil(w * scale - 1e-9)))
    oh, ow = size
    if oh < 1 or ow < 1:
        raise ValueError(f"target size must be >= 1, got {size}")
    mh = resize_matrix(h, oh, oh / h)
    mw = resize_matrix(w, ow, ow / w)
    src = img.astype(np.float64)
    out = np.einsum("oh,hw...->ow...", mh, src)
    out = np.einsum("pw,ow...->op...", mw, out)
    if img.dtype == np.uint8:
        return np.clip(np.round(out), 0, 255).astype(np.uint8)
    return out.astype(img.dtype)


def crop_to_multiple(img: np.ndarray, s: int) -> np.ndarray:
    h, w = img.shape[:2]
    return img[: h - h % s, : w - w % s]


def degrade(hr: np.ndarray, s: int) -> np.ndarray:
    """Bicubic low-resolution counterpart of an HR image cropped to a multiple of ``s``."""
    hr = crop_to_multiple(hr, s)
    return bicubic_resize(hr, size=(hr.shape[0] // s, hr.shape[1] // s))


# patches and augmentation -----------------------------------------------------------------


@dataclass(frozen=True)
class Augment:
    flip_h: bool = False
    flip_v: bool = False
    rot90: int = 0


def apply_augment(t: np.ndarray, aug: Augment) -> np.ndarray:
    """Flip horizontally, then vertically, then rotate by ``rot90`` quarter turns (last two axes)."""
    if aug.flip_h:
        t = t[..., :, ::-1]
    if aug.flip_v:
        t = t[..., ::-1, :]
    if aug.rot90:
        t = np.rot90(t, aug.rot90, axes=(-2, -1))
    return np.ascontiguousarray(t)


def invert_augment(t: np.ndarray, aug: Augment) -> np.ndarray:
    if aug.rot90:
        t = np.rot90(t, -aug.rot90, axes=(-2, -1))
    if aug.flip_v:
        t = t[..., ::-1, :]
    if aug.flip_h:
        t = t[..., :, ::-1]
    return np.ascontiguousarray(t)


@dataclass
class SamplePair:
    lr_patch: np.ndarray
    hr_patch: np.ndarray
    aug: Augment
    origin: tuple[int, int]  # top-left of the LR crop; the HR crop starts at s * origin


def sample_patch(
    hr: np.ndarray,
    s: int,
    rng: np.random.Generator,
    patch: int = 48,
    augment: bool = True,
    lr: np.ndarray | None = None,
    origin: tuple[int, int] | None = None,
) -> SamplePair:
    """Crop an aligned LR/HR pair and apply one random flip/rotation to both.

    Without ``lr`` the LR patch is the bicubic reduction of the HR crop.
    """
    hr_h, hr_w = hr.shape[:2]
    lr_h, lr_w = (hr_h // s, hr_w // s) if lr is None else lr.shape[:2]
    if lr is not None and (lr_h * s > hr_h or lr_w * s > hr_w):
        raise ValueError(f"LR image {lr.shape[:2]} is not a 1/{s} reduction of HR {hr.shape[:2]}")
    if lr_h < patch or lr_w < patch:
        raise ValueError(f"image {hr_h}x{hr_w} too small for a {patch * s}x{patch * s} crop at x{s}")
    if origin is None:
        origin = (int(rng.integers(0, lr_h - patch + 1)), int(rng.integers(0, lr_w - patch + 1)))
    y, x = origin
    hr_crop = hr[y * s : (y + patch) * s, x * s : (x + patch) * s]
    lr_crop = bicubic_resize(hr_crop, size=(patch, patch)) if lr is None else lr[y : y + patch, x : x + patch]
    aug = Augment()
    if augment:
        aug = Augment(bool(rng.random() < 0.5), bool(rng.random() < 0.5), int(rng.random() < 0.5))
    return SamplePair(
        apply_augment(to_tensor(lr_crop), aug),
        apply_augment(to_tensor(hr_crop), aug),
        aug,
        (y, x),
    )


# dataset ----------------------------------------------------------------------------------


class ImageFolder:
    """HR PNGs from a directory, with optional pre-made LR images in ``LR_x{s}`` beside it."""

    def __init__(self, hr_dir: str | Path, scale: int, lr_dir: str | Path | None = None):
        hr_dir = Path(hr_dir)
        paths = sorted(hr_dir.glob("*.png"))
        if not paths:
            raise FileNotFoundError(f"no PNG images in {hr_dir}")
        self.scale = scale
        self.names = [p.stem for p in paths]
        self.hr = [read_png(p) for p in paths]
        if lr_dir is None and (hr_dir.parent / f"LR_x{scale}").is_dir():
            lr_dir = hr_dir.parent / f"LR_x{scale}"
        self.lr = None
        if lr_dir is not None:
            lr_dir = Path(lr_dir)
            missing = [n for n in self.names if not (lr_dir / f"{n}.png").exists()]
            if missing:
                raise FileNotFoundError(f"{lr_dir} lacks LR images for {missing[:3]}")
            self.lr = [read_png(lr_dir / f"{n}.png") for n in self.names]

    @classmethod
    def from_arrays(cls, images: list[np.ndarray], scale: int) -> "ImageFolder":
        obj = cls.__new__(cls)
        obj.scale, obj.hr, obj.lr = scale, list(images), None
        obj.names = [f"img{i:03d}" for i in range(len(images))]
        return obj

    def __len__(self) -> int:
        return len(self.hr)

    def pair(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Whole-image (lr, hr) pair with HR cropped to a multiple of the scale."""
        s = self.scale
        if self.lr is not None:
            lr = self.lr[i]
            return lr, self.hr[i][: lr.shape[0] * s, : lr.shape[1] * s]
        hr = crop_to_multiple(self.hr[i], s)
        return degrade(hr, s), hr


class PatchSampler:
    """Random mini-batches; batch ``step`` depends only on ``(seed, step)``."""

    def __init__(self, data: ImageFolder, batch_size: int, patch: int, seed: int, augment: bool = True):
        if len(data) == 0:
            raise ValueError("empty dataset")
        self.data, self.batch_size, self.patch = data, batch_size, patch
        self.seed, self.augment = seed, augment

    def batch(self, step: int) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng([self.seed, step])
        lrs, hrs = [], []
        for _ in range(self.batch_size):
            i = int(rng.integers(len(self.data)))
            lr = self.data.lr[i] if self.data.lr is not None else None
            pair = sample_patch(self.data.hr[i], self.data.scale, rng, self.patch, self.augment, lr=lr)
            lrs.append(pair.lr_patch)
            hrs.append(pair.hr_patch)
        return np.concatenate(lrs), np.concatenate(hrs)

    def iterate(self, start: int, stop: int, prefetch: int = 0) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Batches ``start..stop-1``; ``prefetch > 0`` builds them on a worker thread."""
        if prefetch <= 0:
            for step in range(start, stop):
                yield self.batch(step)
            return
        q: queue.Queue = queue.Queue(maxsize=prefetch)
        stop_flag = threading.Event()

        def work():
            for step in range(start, stop):
                if stop_flag.is_set():
                    return
                q.put(self.batch(step))

        worker = threading.Thread(target=work, daemon=True)
        worker.start()
        try:
            for _ in range(start, stop):
                yield q.get()
        finally:
            stop_flag.set()
            while worker.is_alive():
                try:
                    q.get_nowait()
                except queue.Empty:
                    worker.join(timeout=0.01)


def synthetic_images(n: int, size: int = 128, seed: int = 0) -> list[np.ndarray]:
    """Smooth gradients, oriented stripes and hard-edged rectangles; textured enough to learn from."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    images = []
    for _ in range(n):
        img = np.empty((size, size, 3))
        for c in range(3):
            theta = rng.uniform(0, np.pi)
            freq = rng.uniform(2, 12)
            phase = rng.uniform(0, 2 * np.pi)
            stripes = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
            ramp = rng.uniform(-1, 1) * xx + rng.uniform(-1, 1) * yy
            img[..., c] = 0.5 + 0.25 * stripes + 0.2 * ramp
        for _ in range(int(rng.integers(3, 7))):
            y0, x0 = rng.integers(0, size - 8, 2)
            h, w = rng.integers(8, size // 2, 2)
            img[y0 : y0 + h, x0 : x0 + w] = rng.uniform(0, 1, 3)
        images.append(np.clip(np.round(img * 255), 0, 255).astype(np.uint8))
    return images
