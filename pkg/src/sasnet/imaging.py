"""Images as (H, W, C) float64 arrays in [0, 1]: I/O, coordinate lattices, test images."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


def as_hwc(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected an (H, W), (H, W, 1) or (H, W, 3) image, got {img.shape}")
    if min(img.shape[:2]) < 2:
        raise ValueError(f"image dimensions must be >= 2, got {img.shape[:2]}")
    return img


def pixel_coords(w: int, h: int, margin: float = 0.95, shift: float = 0.0, scale: int = 1) -> np.ndarray:
    """Pixel-center lattice in row-major order (y outer), columns (x, y).

    x(i) = margin * (2 (i + 0.5 + shift) / (w scale) - 1), likewise for y.
    ``scale`` > 1 gives a finer lattice of coordinates never seen in training.
    """
    if not 0 < margin <= 1:
        raise ValueError(f"margin must be in (0, 1], got {margin}")
    if scale < 1 or int(scale) != scale:
        raise ValueError(f"scale must be a positive integer, got {scale}")
    xs = margin * (2.0 * (np.arange(w * scale) + 0.5 + shift) / (w * scale) - 1.0)
    ys = margin * (2.0 * (np.arange(h * scale) + 0.5 + shift) / (h * scale) - 1.0)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def toy_image(size: int = 256) -> np.ndarray:
    """Binary rings 1(sin(28 pi exp(-d / 20)) > 0.5), d = pixel distance to the image center.

    Rings widen outward and vanish past d ~ 102 px; with a growing exponent the
    pattern would exceed the pixel Nyquist rate everywhere.
    """
    if size < 2:
        raise ValueError("toy image size must be >= 2")
    c = (size - 1) / 2.0
    i, j = np.mgrid[0:size, 0:size]
    d = np.hypot(i - c, j - c)
    return (np.sin(28.0 * np.pi * np.exp(-d / 20.0)) > 0.5).astype(np.float64)[:, :, None]


def to_gray(img: np.ndarray) -> np.ndarray:
    img = as_hwc(img)
    if img.shape[2] == 1:
        return img
    return (img @ GRAY_WEIGHTS)[:, :, None]


def fd_gradient(img_gray: np.ndarray) -> np.ndarray:
    """(d/dx, d/dy) in intensity per pixel, (H, W, 2); second order everywhere."""
    g = np.asarray(img_gray, dtype=np.float64)
    if g.ndim == 3:
        if g.shape[2] != 1:
            raise ValueError("fd_gradient expects a single-channel image")
        g = g[:, :, 0]
    gy, gx = np.gradient(g, edge_order=2)
    return np.stack([gx, gy], axis=2)


def load_png(path, size: int | None = None, gray: bool = False) -> np.ndarray:
    """Read an 8-bit image; optionally center-crop to a square and resize (bilinear)."""
    im = Image.open(path)
    im = im.convert("L") if im.mode in ("L", "I;16", "I", "1", "LA") else im.convert("RGB")
    if size is not None:
        w, h = im.size
        s = min(w, h)
        left, top = (w - s) // 2, (h - s) // 2
        im = im.crop((left, top, left + s, top + s))
        if s != size:
            im = im.resize((size, size), Image.BILINEAR)
    img = as_hwc(np.asarray(im, dtype=np.float64) / 255.0)
    return to_gray(img) if gray else img


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def save_png(path, img: np.ndarray):
    arr = to_uint8(as_hwc(img))
    Image.fromarray(arr[:, :, 0] if arr.shape[2] == 1 else arr).save(Path(path))


def save_png16(path, gray: np.ndarray):
    """Single-channel values in [0, 1] as a 16-bit grayscale PNG."""
    arr = np.clip(np.rint(np.asarray(gray, dtype=np.float64) * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(arr).save(Path(path))


def error_map(gt: np.ndarray, pred: np.ndarray, clip: float = 0.02) -> np.ndarray:
    """Jet-colored mean absolute error, saturating at ``clip``; (H, W, 3) in [0, 1]."""
    from matplotlib import colormaps

    err = np.abs(as_hwc(gt) - as_hwc(pred)).mean(axis=2)
    return colormaps["jet"](np.clip(err / clip, 0.0, 1.0))[:, :, :3]


def normalize(field: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; near-constant fields map to 0."""
    lo, hi = float(np.min(field)), float(np.max(field))
    if not np.isfinite(hi - lo) or hi - lo < 1e-12:
        return np.zeros_like(field, dtype=np.float64)
    return (field - lo) / (hi - lo)
