"""Reconstruction quality measures: MSE, PSNR and windowed SSIM."""

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve

PSNR_CAP_DB = 200.0  # reported value when MSE is exactly 0

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def mse(x, ref):
    x, ref = np.asarray(x, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    return float(np.mean((x - ref) ** 2))


def default_peak(ref):
    """Dynamic range of the reference, the documented default PSNR peak."""
    ref = np.asarray(ref)
    rng = float(ref.max() - ref.min())
    return rng if rng > 0 else 1.0


def psnr(x, ref, peak=None):
    """10 log10(peak^2 / MSE) in dB, capped at PSNR_CAP_DB for exact matches."""
    if peak is None:
        peak = default_peak(ref)
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    err = mse(x, ref)
    if err == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(peak * peak / err), PSNR_CAP_DB)


def _gaussian_window(size, sigma):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(x, ref, window=SSIM_WINDOW, k1=SSIM_K1, k2=SSIM_K2, dynamic_range=None):
    """Mean windowed SSIM with Gaussian weighting.

    2D inputs are scored directly; 3D inputs are averaged over slices along
    the last axis.
    """
    x, ref = np.asarray(x, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    if x.ndim == 3:
        return float(
            np.mean(
                [ssim(x[..., i], ref[..., i], window, k1, k2, dynamic_range)
                 for i in range(x.shape[-1])]
            )
        )
    if x.ndim != 2:
        raise ValueError("ssim expects 2D slices or a 3D stack")
    if window % 2 == 0 or window > min(x.shape):
        raise ValueError(f"window {window} must be odd and fit inside {x.shape}")
    if dynamic_range is None:
        dynamic_range = default_peak(ref)
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    w = _gaussian_window(window, SSIM_SIGMA)

    def filt(img):
        return convolve(img, w, mode="valid")

    mu_x, mu_r = filt(x), filt(ref)
    xx = filt(x * x) - mu_x * mu_x
    rr = filt(ref * ref) - mu_r * mu_r
    xr = filt(x * ref) - mu_x * mu_r
    num = (2 * mu_x * mu_r + c1) * (2 * xr + c2)
    den = (mu_x**2 + mu_r**2 + c1) * (xx + rr + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class QualityReport:
    """One CSV row worth of reconstruction quality numbers."""

    mse: float
    psnr: float
    ssim: float

    @staticmethod
    def evaluate(x, ref, peak=None):
        return QualityReport(
            mse=mse(x, ref),
            psnr=psnr(x, ref, peak),
            ssim=ssim(x, ref) if np.asarray(x).ndim in (2, 3) else float("nan"),
        )

    def csv_row(self):
        return f"{self.mse:.10g},{self.psnr:.6f},{self.ssim:.6f}"
