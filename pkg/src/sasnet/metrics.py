"""Image-fitting metrics: PSNR, SSIM, edge-region PSNR and gradient-norm noisiness."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from . import _kernels
from .imaging import as_hwc

PSNR_CAP = 100.0


def _mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr_from_mse(mse: float) -> float:
    if mse <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * math.log10(mse))


def psnr(gt: np.ndarray, pred: np.ndarray) -> float:
    """Peak-1 PSNR in dB; identical images give the 100 dB cap."""
    return psnr_from_mse(_mse(gt, pred))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(gt: np.ndarray, pred: np.ndarray, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Single-scale SSIM, Gaussian-weighted, over fully covered windows, channel-averaged."""
    gt, pred = as_hwc(gt), as_hwc(pred)
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch: {gt.shape} vs {pred.shape}")
    if min(gt.shape[:2]) < window:
        raise ValueError(f"image {gt.shape[:2]} is smaller than the {window}x{window} SSIM window")
    win = gaussian_window(window, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    r = window // 2

    def filt(a):
        return ndimage.correlate(a, win, mode="constant")[r:-r, r:-r]

    scores = []
    for ch in range(gt.shape[2]):
        x, y = gt[:, :, ch], pred[:, :, ch]
        mx, my = filt(x), filt(y)
        sxx = filt(x * x) - mx * mx
        syy = filt(y * y) - my * my
        sxy = filt(x * y) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


# -- edge / smooth partition ---------------------------------------------------------


@dataclass(frozen=True)
class CannyParams:
    sigma: float = 1.4
    low: float = 0.1
    high: float = 0.2
    dilation_radius: int = 3


@dataclass
class EdgePartition:
    edge: np.ndarray  # (H, W) bool
    params: CannyParams = field(default_factory=CannyParams)

    @property
    def smooth(self) -> np.ndarray:
        return ~self.edge


def disk(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius * radius


def canny(gray: np.ndarray, sigma: float = 1.4, low: float = 0.1, high: float = 0.2) -> np.ndarray:
    """Canny edges; thresholds are fractions of the peak gradient magnitude."""
    g = np.asarray(gray, dtype=np.float64)
    if g.ndim == 3:
        g = g[:, :, 0]
    smoothed = ndimage.gaussian_filter(g, sigma, mode="nearest")
    gx = ndimage.sobel(smoothed, axis=1, mode="nearest")
    gy = ndimage.sobel(smoothed, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 1e-12:
        return np.zeros(g.shape, dtype=bool)
    thin = _kernels.nms(mag, gx, gy)
    strong = thin >= high * peak
    weak = thin >= low * peak
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros(g.shape, dtype=bool)
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return keep[labels]


def edge_partition(gt_gray: np.ndarray, params: CannyParams | None = None) -> EdgePartition:
    params = params or CannyParams()
    edges = canny(gt_gray, params.sigma, params.low, params.high)
    if params.dilation_radius > 0 and edges.any():
        edges = ndimage.binary_dilation(edges, structure=disk(params.dilation_radius))
    return EdgePartition(edges, params)


def psnr_edge(gt: np.ndarray, pred: np.ndarray, partition: EdgePartition) -> float:
    """PSNR over edge pixels only; NaN when the edge set is empty."""
    gt, pred = as_hwc(gt), as_hwc(pred)
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch: {gt.shape} vs {pred.shape}")
    mask = partition.edge
    if not mask.any():
        return float("nan")
    return psnr_from_mse(_mse(gt[mask], pred[mask]))


def noisiness(gt_grad: np.ndarray, model_grad: np.ndarray, partition: EdgePartition) -> tuple[float, float]:
    """Mean and std over smooth pixels of | ||grad gt|| - ||grad model|| |.

    Both gradients are (H, W, 2) in intensity per pixel.
    """
    gt_grad, model_grad = np.asarray(gt_grad), np.asarray(model_grad)
    if gt_grad.shape != model_grad.shape:
        raise ValueError(f"shape mismatch: {gt_grad.shape} vs {model_grad.shape}")
    smooth = partition.smooth
    if not smooth.any():
        raise ValueError("noisiness is undefined without smooth pixels")
    diff = np.abs(np.linalg.norm(gt_grad, axis=2) - np.linalg.norm(model_grad, axis=2))[smooth]
    return float(diff.mean()), float(diff.std())


@dataclass
class MetricReport:
    step: int
    mse: float
    l1: float
    sparse: float
    psnr: float
    ssim: float
    psnr_edge: float
    noisiness_mean: float
    noisiness_std: float

    FIELDS = ("step", "mse", "l1", "sparse", "psnr", "ssim", "psnr_edge", "noisiness_mean", "noisiness_std")

    def as_dict(self) -> dict:
        return asdict(self)

    def row(self) -> list:
        d = self.as_dict()
        return [d[k] for k in self.FIELDS]
