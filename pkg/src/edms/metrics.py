"""PSNR and multi-scale SSIM."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d


@dataclass(frozen=True)
class MsSsimParams:
    weights: tuple = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 255.0

    @property
    def scales(self) -> int:
        return len(self.weights)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over all pixels and channels; ``inf`` if identical."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"dim mismatch: {a.shape} vs {b.shape}")
    diff = a.astype(np.int64) - b.astype(np.int64)
    sse = int(np.square(diff).sum())
    if sse == 0:
        return math.inf
    mse = sse / diff.size
    return 10.0 * math.log10(255.0 ** 2 / mse)


def luma(img: np.ndarray) -> np.ndarray:
    """Rec. 601 luma as float64; single-channel inputs pass through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2
    g = np.exp(-(offsets ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def usable_scales(shape, params: MsSsimParams = MsSsimParams()) -> int:
    """How many scales fit: the coarsest scale must still hold one full window."""
    smallest = min(shape[:2])
    scales = 0
    while scales < params.scales and smallest >= params.window * 2 ** scales:
        scales += 1
    return scales


def _ssim_terms(x: np.ndarray, y: np.ndarray, window: np.ndarray, c1: float, c2: float):
    def filt(z):
        return convolve2d(z, window, mode="valid")

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x * mu_x
    syy = filt(y * y) - mu_y * mu_y
    sxy = filt(x * y) - mu_x * mu_y
    lum = (2 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    return lum, cs


def _downsample(z: np.ndarray) -> np.ndarray:
    h, w = (z.shape[0] // 2) * 2, (z.shape[1] // 2) * 2
    z = z[:h, :w]
    return 0.25 * (z[0::2, 0::2] + z[1::2, 0::2] + z[0::2, 1::2] + z[1::2, 1::2])


def ms_ssim(a: np.ndarray, b: np.ndarray, params: MsSsimParams = MsSsimParams()) -> float:
    """Multi-scale SSIM on luma.

    Images too small for all five scales use as many as fit, with the
    leading weights renormalised to sum to one.  Negative per-scale terms
    are clipped to zero before exponentiation.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"dim mismatch: {a.shape} vs {b.shape}")
    scales = usable_scales(a.shape, params)
    if scales == 0:
        raise ValueError(f"image {a.shape[:2]} smaller than one {params.window}x{params.window} window")
    weights = np.asarray(params.weights[:scales], dtype=np.float64)
    if scales < params.scales:
        weights = weights / weights.sum()
    window = gaussian_window(params.window, params.sigma)
    c1 = (params.k1 * params.dynamic_range) ** 2
    c2 = (params.k2 * params.dynamic_range) ** 2
    x, y = luma(a), luma(b)
    result = 1.0
    for j in range(scales):
        lum, cs = _ssim_terms(x, y, window, c1, c2)
        term = float(np.mean(lum * cs)) if j == scales - 1 else float(np.mean(cs))
        result *= max(term, 0.0) ** weights[j]
        if j < scales - 1:
            x, y = _downsample(x), _downsample(y)
    return result
