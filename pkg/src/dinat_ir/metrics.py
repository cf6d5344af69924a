"""PSNR and SSIM on [0, 1] images shaped (C, H, W) or (B, C, H, W)."""
from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError, GeometryError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) over every pixel and channel; identical inputs give inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def format_db(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.2f}"


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable valid-region filtering over the last two axes."""
    n = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, n, axis=-2) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, n, axis=-1) @ g


def ssim(a, b) -> float:
    """Gaussian-window SSIM (11x11, sigma 1.5), valid region, averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise GeometryError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    g = gaussian_window()
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    smap = num / den
    # mean per channel, then across channels (and batch)
    return float(np.mean(smap.reshape(-1, smap.shape[-2] * smap.shape[-1]).mean(axis=1)))
