"""Image quality metrics and vessel-visibility checks.

PSNR uses the label maximum as data range and reports a 99.0 dB sentinel
for exact matches so tables stay numeric. SSIM follows the standard local
formulation with an 11x11 Gaussian window (sigma 1.5) and stability
constants K1=0.01, K2=0.03; the constants are recorded in every
MetricRecord for reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .validation import DataError, GeometryError

PSNR_SENTINEL = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class MetricRecord:
    psnr: float
    ssim: float
    image_type: str  # "MRA" or "MIP"
    identifier: str = ""
    constants: dict = field(
        default_factory=lambda: {
            "ssim_window": SSIM_WINDOW,
            "ssim_sigma": SSIM_SIGMA,
            "ssim_k1": SSIM_K1,
            "ssim_k2": SSIM_K2,
            "psnr_sentinel": PSNR_SENTINEL,
            "region": "whole-image",
        }
    )

    def __post_init__(self):
        if self.image_type not in ("MRA", "MIP"):
            raise DataError(f"image_type must be MRA or MIP, got {self.image_type!r}")


def _as_float_pair(recon, label, name: str):
    r = np.asarray(recon, dtype=np.float64)
    l = np.asarray(label, dtype=np.float64)
    if r.shape != l.shape:
        raise GeometryError(f"{name}: shape {r.shape} does not match label {l.shape}")
    return r, l


def psnr(recon, label) -> float:
    """Peak signal-to-noise ratio in dB, peak taken from the label."""
    r, l = _as_float_pair(recon, label, "psnr")
    peak = float(l.max())
    if peak <= 0:
        raise DataError("psnr label must not be identically zero")
    mse = float(np.mean((r - l) ** 2))
    if mse == 0:
        return PSNR_SENTINEL
    return min(10.0 * np.log10(peak**2 / mse), PSNR_SENTINEL)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(recon, label) -> float:
    """Mean local structural similarity over the valid window region."""
    r, l = _as_float_pair(recon, label, "ssim")
    if r.ndim != 2:
        raise GeometryError(f"ssim expects 2-D images, got shape {r.shape}")
    if min(r.shape) < SSIM_WINDOW:
        raise GeometryError(f"images must be at least {SSIM_WINDOW} pixels per side")
    data_range = float(l.max())
    if data_range <= 0:
        raise DataError("ssim label must not be identically zero")
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    mu_r = convolve2d(r, win, mode="valid")
    mu_l = convolve2d(l, win, mode="valid")
    var_r = convolve2d(r * r, win, mode="valid") - mu_r**2
    var_l = convolve2d(l * l, win, mode="valid") - mu_l**2
    cov = convolve2d(r * l, win, mode="valid") - mu_r * mu_l
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    num = (2 * mu_r * mu_l + c1) * (2 * cov + c2)
    den = (mu_r**2 + mu_l**2 + c1) * (var_r + var_l + c2)
    return float(np.mean(num / den))


def vessel_continuity(mip_image, projected_vessel_mask, threshold: float) -> float:
    """Fraction of projected vessel pixels whose projection exceeds threshold.

    A drop in this fraction between two reconstructions of the same volume
    means previously visible vessel segments vanished from the projection.
    """
    img = np.asarray(mip_image, dtype=np.float64)
    m = np.asarray(projected_vessel_mask, dtype=bool)
    if img.shape != m.shape:
        raise GeometryError(f"projection {img.shape} does not match mask {m.shape}")
    if not m.any():
        raise DataError("projected vessel mask is empty")
    return float(np.mean(img[m] >= threshold))
