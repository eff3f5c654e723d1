"""Full-reference PSNR/SSIM and the no-reference average gradient (AG).

Images are (C, H, W) or (H, W) arrays/tensors on [0, 1]. SSIM and AG run on
Rec.601 luminance for 3-channel input.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 99.0
LUMA = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW, SSIM_SIGMA, SSIM_K1, SSIM_K2 = 11, 1.5, 0.01, 0.03


def as_array(img) -> np.ndarray:
    if hasattr(img, "detach"):
        img = img.detach().cpu().numpy()
    return np.asarray(img, dtype=np.float64)


def luminance(img) -> np.ndarray:
    a = as_array(img)
    if a.ndim == 2:
        return a
    if a.ndim == 3 and a.shape[0] == 3:
        return np.tensordot(LUMA, a, axes=(0, 0))
    if a.ndim == 3 and a.shape[0] == 1:
        return a[0]
    raise ValueError(f"expected (3, H, W), (1, H, W) or (H, W), got {a.shape}")


def psnr(a, b, peak: float = 1.0) -> float:
    a, b = as_array(a), as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak**2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    rows = sliding_window_view(img, k, axis=0) @ g  # (H-k+1, W)
    return sliding_window_view(rows, k, axis=1) @ g


def ssim(a, b, peak: float = 1.0) -> float:
    x, y = luminance(a), luminance(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1, c2 = (SSIM_K1 * peak) ** 2, (SSIM_K2 * peak) ** 2
    g = gaussian_window()
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    vx = _filter_valid(x * x, g) - mx * mx
    vy = _filter_valid(y * y, g) - my * my
    cov = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * cov + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def avg_gradient(img) -> float:
    """Mean of sqrt((dx^2 + dy^2) / 2) over forward differences of luminance."""
    y = luminance(img)
    if y.shape[0] < 2 or y.shape[1] < 2:
        raise ValueError(f"average gradient needs H, W >= 2, got {y.shape}")
    dx = y[:-1, 1:] - y[:-1, :-1]
    dy = y[1:, :-1] - y[:-1, :-1]
    return float(np.mean(np.sqrt((dx**2 + dy**2) / 2)))
