"""Image quality metrics: MAE, PSNR and SSIM."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DimensionMismatch

#: value returned by :func:`psnr` for identical images
PSNR_CAP = 300.0


@dataclass(frozen=True)
class MetricsRecord:
    mae: float
    psnr: float
    ssim: float


def _pair(x, ref):
    x = np.asarray(x, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if x.size != ref.size:
        raise DimensionMismatch(f"sizes differ: {x.size} vs {ref.size}")
    return x.ravel(), ref.ravel()


def mae(x, ref) -> float:
    x, ref = _pair(x, ref)
    return float(np.mean(np.abs(x - ref)))


def psnr(x, ref) -> float:
    """PSNR in dB with the peak taken as ``max(ref)``; capped at 300 dB."""
    x, ref = _pair(x, ref)
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(20.0 * np.log10(ref.max()) - 10.0 * np.log10(mse))


def _as_square(a):
    side = int(round(np.sqrt(a.size)))
    if side * side != a.size:
        raise DimensionMismatch(f"{a.size} pixels do not form a square image")
    return a.reshape(side, side)


def ssim(x, ref, data_range=None) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5).

    ``data_range`` defaults to ``max(ref) - min(ref)`` (1 for a flat
    reference), which makes the index asymmetric unless it is fixed by the
    caller.  Statistics within 5 pixels of the border are excluded.
    """
    x, ref = _pair(x, ref)
    x, ref = _as_square(x), _as_square(ref)
    if min(x.shape) < 11:
        raise DimensionMismatch("ssim needs images of at least 11x11 pixels")
    if data_range is None:
        data_range = float(ref.max() - ref.min()) or 1.0
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def blur(a):
        return gaussian_filter(a, sigma=1.5, truncate=3.5, mode="reflect")

    mx, mr = blur(x), blur(ref)
    vx = blur(x * x) - mx * mx
    vr = blur(ref * ref) - mr * mr
    cov = blur(x * ref) - mx * mr
    smap = ((2 * mx * mr + c1) * (2 * cov + c2)) / ((mx * mx + mr * mr + c1) * (vx + vr + c2))
    return float(smap[5:-5, 5:-5].mean())


def quality(x, ref) -> MetricsRecord:
    """MAE, PSNR and SSIM; SSIM is NaN when the signals are not square images."""
    x, ref = _pair(x, ref)
    side = int(round(np.sqrt(x.size)))
    s = ssim(x, ref) if side * side == x.size and side >= 11 else float("nan")
    return MetricsRecord(mae(x, ref), psnr(x, ref), s)
