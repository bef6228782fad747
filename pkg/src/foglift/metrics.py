"""Image-quality metrics: PSNR, SSIM, and depth-masked PSNR.

All metrics operate on linear-RGB float images.  The depth-masked PSNR
restricts scoring to the nearest pixels by ground-truth depth, which is the
fog-removal protocol: far pixels may legitimately differ because heavy fog
hid them during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .threshold import luminance

PSNR_CAP = 99.0


class NoForegroundError(Exception):
    """Raised when a depth map contains no hit pixels to mask against."""


@dataclass(frozen=True)
class MaskedPsnrConfig:
    target_fraction: float = 0.5
    peak: float = 1.0

    def __post_init__(self):
        if not 0 < self.target_fraction <= 1:
            raise ValueError("target_fraction must lie in (0, 1]")


def psnr(a, b, peak=1.0):
    """10 log10(peak^2 / MSE) in dB over all channels, capped at 99."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(peak * peak / mse)))


def _gaussian_kernel(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def ssim(a, b, peak=1.0):
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5).

    Color inputs are reduced to luminance first.  Stabilizers are the usual
    C1 = (0.01 peak)^2 and C2 = (0.03 peak)^2; the mean runs over the region
    where the window fits entirely inside the image.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a = luminance(a)
        b = luminance(b)
    size = 11
    if min(a.shape) < size:
        raise ValueError(f"image {a.shape} smaller than the {size}x{size} SSIM window")
    kernel = _gaussian_kernel(size)
    half = size // 2

    def smooth(img):
        out = convolve1d(img, kernel, axis=0, mode="constant")
        out = convolve1d(out, kernel, axis=1, mode="constant")
        return out[half:-half, half:-half]

    mu_a = smooth(a)
    mu_b = smooth(b)
    var_a = smooth(a * a) - mu_a * mu_a
    var_b = smooth(b * b) - mu_b * mu_b
    cov = smooth(a * b) - mu_a * mu_b
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def depth_mask(gt_depth, target_fraction=0.5):
    """Mask of the nearest ``target_fraction`` of hit pixels by ground-truth depth.

    Depth 0 means no hit and is always excluded.  The cut uses the
    nearest-rank quantile, so exactly ceil(fraction * hits) pixels survive
    when depths are distinct.
    """
    depth = np.asarray(gt_depth, dtype=np.float64)
    hits = depth > 0
    n_hits = int(hits.sum())
    if n_hits == 0:
        raise NoForegroundError("depth map has no hit pixels")
    k = max(1, int(np.ceil(target_fraction * n_hits)))
    cutoff = np.partition(depth[hits], k - 1)[k - 1]
    return hits & (depth <= cutoff)


def masked_psnr(render, gt_clear, gt_depth, cfg=None):
    """PSNR restricted to the nearest half (by default) of hit pixels."""
    cfg = cfg or MaskedPsnrConfig()
    render = np.asarray(render, dtype=np.float64)
    gt_clear = np.asarray(gt_clear, dtype=np.float64)
    if render.shape != gt_clear.shape or render.shape[:2] != np.shape(gt_depth)[:2]:
        raise ValueError(
            f"shape mismatch: render {render.shape}, clear {gt_clear.shape}, "
            f"depth {np.shape(gt_depth)}"
        )
    mask = depth_mask(gt_depth, cfg.target_fraction)
    return psnr(render[mask], gt_clear[mask], peak=cfg.peak)
