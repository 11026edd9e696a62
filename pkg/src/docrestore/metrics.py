"""Full-reference image quality metrics: PSNR and SSIM.

Both operate on (H, W, 3) or (H, W) arrays with values in [0, 1] and
compute in float64.  SSIM follows the canonical settings: ITU-R 601 luma,
11x11 Gaussian window with sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic
range 1, valid-mode windowing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PSNR_CAP_DB = 100.0  # reported for (near-)identical images instead of infinity

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class MetricRecord:
    psnr_db: float
    ssim: float


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """Peak signal-to-noise ratio in dB over [0,1] images, capped at 100."""
    a, b = _check_pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse <= 10.0 ** (-PSNR_CAP_DB / 10.0):
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def to_luma(img):
    """ITU-R 601 weighted luma; grayscale inputs pass through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ _LUMA
    raise ValueError(f"expected (H,W) or (H,W,3), got {img.shape}")


def _gaussian_1d(size=_SSIM_WINDOW, sigma=_SSIM_SIGMA):
    coords = np.arange(size) - size // 2
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def gaussian_window(size=_SSIM_WINDOW, sigma=_SSIM_SIGMA):
    """The 2-D window (outer product of the separable 1-D kernel)."""
    g = _gaussian_1d(size, sigma)
    return np.outer(g, g)


def _filter_valid(img, g1):
    """Valid-mode 2-D correlation with a separable symmetric kernel."""
    out = np.apply_along_axis(lambda r: np.convolve(r, g1[::-1], mode="valid"), 1, img)
    out = np.apply_along_axis(lambda c: np.convolve(c, g1[::-1], mode="valid"), 0, out)
    return out


def ssim(a, b):
    """Mean local structural similarity over the luma channel."""
    a, b = _check_pair(a, b)
    x = to_luma(a)
    y = to_luma(b)
    if min(x.shape) < _SSIM_WINDOW:
        raise ValueError(f"image extents {x.shape} smaller than the "
                         f"{_SSIM_WINDOW}x{_SSIM_WINDOW} window")
    g1 = _gaussian_1d()
    c1 = (_SSIM_K1 * 1.0) ** 2
    c2 = (_SSIM_K2 * 1.0) ** 2
    mu_x = _filter_valid(x, g1)
    mu_y = _filter_valid(y, g1)
    xx = _filter_valid(x * x, g1)
    yy = _filter_valid(y * y, g1)
    xy = _filter_valid(x * y, g1)
    var_x = xx - mu_x ** 2
    var_y = yy - mu_y ** 2
    cov = xy - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def measure(pred, target):
    return MetricRecord(psnr_db=psnr(pred, target), ssim=ssim(pred, target))
