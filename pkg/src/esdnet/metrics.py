"""PSNR and SSIM for images in [0, 1]."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError

PSNR_CAP = 100.0


def _as_chw(x):
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if x.ndim == 4 and x.shape[0] == 1:
        x = x[0]
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ContractError(f"expected an H x W or C x H x W image, got {x.shape}")
    return x


def psnr(a, b, peak=1.0, cap=PSNR_CAP):
    """Peak signal-to-noise ratio in dB.

    Identical images give ``cap`` (100 dB) rather than infinity so the value
    can be averaged; pass ``cap=None`` to get ``inf``.
    """
    a, b = _as_chw(a), _as_chw(b)
    if a.shape != b.shape:
        raise ContractError(f"psnr shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return np.inf if cap is None else cap
    val = float(10.0 * np.log10(peak ** 2 / mse))
    return val if cap is None else min(val, cap)


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x, g):
    k = g.size
    t = sliding_window_view(x, k, axis=-1) @ g
    return sliding_window_view(t, k, axis=-2) @ g


def ssim(a, b, win_size=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean SSIM over all valid windows and channels (Gaussian weighting)."""
    a, b = _as_chw(a), _as_chw(b)
    if a.shape != b.shape:
        raise ContractError(f"ssim shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[1:]) < win_size:
        raise ContractError(f"image {a.shape[1:]} is smaller than the {win_size}x{win_size} window")
    g = gaussian_window(win_size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))
