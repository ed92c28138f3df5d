"""Full-reference image quality metrics (PSNR, SSIM) on the 0-255 scale."""

from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d

PEAK = 255.0


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    err = mse(a, b)
    if err == 0.0:
        return float("inf")
    return float(10.0 * np.log10(PEAK * PEAK / err))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter(img, g):
    # separable 'valid' filtering, matching the reference implementation
    return convolve2d(convolve2d(img, g[:, None], mode="valid"), g[None, :], mode="valid")


def ssim_map(a, b, k1: float = 0.01, k2: float = 0.03, win: int = 11, sigma: float = 1.5):
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ValueError(f"expected single-channel images, got shape {a.shape}")
    if min(a.shape) < win:
        raise ValueError(f"image {a.shape} is smaller than the {win}x{win} SSIM window")
    g = _gaussian_window(win, sigma)
    c1 = (k1 * PEAK) ** 2
    c2 = (k2 * PEAK) ** 2
    mu_a = _filter(a, g)
    mu_b = _filter(b, g)
    var_a = _filter(a * a, g) - mu_a * mu_a
    var_b = _filter(b * b, g) - mu_b * mu_b
    cov = _filter(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b) -> float:
    """Mean structural similarity (Gaussian 11x11 window, sigma 1.5)."""
    return float(np.mean(ssim_map(a, b)))
