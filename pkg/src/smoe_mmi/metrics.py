"""Image quality metrics with peak value 1.0."""
from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized 1D Gaussian taps; the 2D window is their outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _valid_filter(img, taps):
    n = taps.size
    out = correlate1d(img, taps, axis=0, mode="constant")
    out = correlate1d(out, taps, axis=1, mode="constant")
    lo = n // 2
    hi = n - 1 - lo
    return out[lo:img.shape[0] - hi, lo:img.shape[1] - hi]


def ssim_map(a, b, win_size: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
             data_range: float = 1.0, gaussian: bool = True) -> np.ndarray:
    """Local SSIM over every fully contained window position."""
    a, b = _pair(a, b)
    if a.ndim != 2 or min(a.shape) < win_size:
        raise ValueError(f"images must be 2D with both sides >= {win_size}, got {a.shape}")
    taps = gaussian_window(win_size, sigma) if gaussian else np.full(win_size, 1.0 / win_size)
    mu_a = _valid_filter(a, taps)
    mu_b = _valid_filter(b, taps)
    var_a = _valid_filter(a * a, taps) - mu_a * mu_a
    var_b = _valid_filter(b * b, taps) - mu_b * mu_b
    cov = _valid_filter(a * b, taps) - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, **kwargs) -> float:
    """Mean structural similarity (11x11 Gaussian window, sigma 1.5 by default).

    Keyword arguments are forwarded to :func:`ssim_map`.
    """
    return float(np.mean(ssim_map(a, b, **kwargs)))
