"""Automatic density-threshold estimation from a global-contrast sweep.

A batch of pixel rays is sampled from the field once and cached.  The cached
samples are then recomposited under every candidate threshold; the Michelson
contrast of the resulting batch luminances, smoothed with a Savitzky-Golay
filter, flattens into a plateau once all low-density (fog) samples have been
cut.  The first index of that plateau gives the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .render import camera_rays, composite_arrays, sample_ray_batch

REC709_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])


class NoPlateauError(Exception):
    """Raised when the contrast gradient never stays flat for a full window."""


@dataclass(frozen=True)
class ThresholdConfig:
    """Sweep and detection parameters.

    ``q_max``/``q_step`` span the candidate thresholds {0, q_step, ..., q_max};
    ``savgol_window`` doubles as the length of the flat run that defines a
    plateau.  ``flat_tolerance`` is the largest gradient magnitude (contrast
    per unit density) still treated as zero.
    """

    q_max: float = 8.0
    q_step: float = 0.05
    batch_size: int = 4096
    savgol_window: int = 21
    savgol_order: int = 2
    flat_tolerance: float = 1e-3
    rng_seed: int = 0

    def __post_init__(self):
        if self.q_step <= 0:
            raise ValueError("q_step must be positive")
        if self.q_max < self.q_step:
            raise ValueError("q_max must be at least q_step")
        if self.savgol_window % 2 == 0 or self.savgol_window <= self.savgol_order:
            raise ValueError("savgol_window must be odd and exceed savgol_order")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")

    def candidates(self):
        """Ascending threshold candidates starting at exactly 0."""
        n = int(np.floor(self.q_max / self.q_step + 1e-9)) + 1
        return np.arange(n) * self.q_step


@dataclass(frozen=True)
class ContrastCurve:
    """Contrast as a function of candidate threshold, raw and smoothed."""

    sigma_thre: np.ndarray
    kappa_raw: np.ndarray
    kappa_smooth: np.ndarray
    detected: float | None = None

    def __post_init__(self):
        s = np.asarray(self.sigma_thre, dtype=np.float64)
        r = np.asarray(self.kappa_raw, dtype=np.float64)
        m = np.asarray(self.kappa_smooth, dtype=np.float64)
        if not (s.shape == r.shape == m.shape) or s.ndim != 1:
            raise ValueError("curve arrays must be 1-D and equally long")
        if s[0] != 0:
            raise ValueError("candidate thresholds must start at 0")
        object.__setattr__(self, "sigma_thre", s)
        object.__setattr__(self, "kappa_raw", r)
        object.__setattr__(self, "kappa_smooth", m)


def luminance(rgb):
    """Rec. 709 luminance of linear RGB values, vectorized over (..., 3)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if np.any(rgb < 0):
        raise ValueError("luminance expects non-negative linear channels")
    return rgb @ REC709_WEIGHTS


def michelson(values):
    """(max - min) / (max + min) of a set of luminances; 0 for an all-zero set."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("michelson contrast of an empty set is undefined")
    if np.any(values < 0):
        raise ValueError("luminances must be non-negative")
    lo = float(values.min())
    hi = float(values.max())
    if hi + lo == 0:
        return 0.0
    return (hi - lo) / (hi + lo)


def _polyfit_eval(offsets, values, order, at):
    """Least-squares polynomial of given order through (offsets, values), evaluated at ``at``."""
    a = np.vander(offsets, order + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(a, values, rcond=None)
    return float(np.polynomial.polynomial.polyval(at, coef))


def savgol_smooth(y, window, order):
    """Savitzky-Golay smoothing: windowed least-squares polynomial fits.

    Interior outputs use the centered window; near the array ends the window
    is truncated at the boundary and a polynomial is fitted over the remaining
    one-sided span (order lowered if fewer points than coefficients remain).
    """
    y = np.asarray(y, dtype=np.float64)
    if window % 2 == 0:
        raise ValueError("window must be odd")
    if window <= order:
        raise ValueError("window must exceed the polynomial order")
    if y.ndim != 1 or len(y) < window:
        raise ValueError(f"need a 1-D array of at least {window} values, got {y.shape}")
    half = window // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    # center-evaluation coefficients of the least-squares fit
    coeffs = np.linalg.pinv(np.vander(offsets, order + 1, increasing=True))[0]
    out = np.empty_like(y)
    out[half:len(y) - half] = np.correlate(y, coeffs, mode="valid")
    for i in range(half):
        lo = 0
        hi = i + half + 1
        off = np.arange(lo, hi, dtype=np.float64) - i
        eff = min(order, hi - lo - 1)
        out[i] = _polyfit_eval(off, y[lo:hi], eff, 0.0)
        j = len(y) - 1 - i
        lo = j - half
        off = np.arange(lo, len(y), dtype=np.float64) - j
        eff = min(order, len(y) - lo - 1)
        out[j] = _polyfit_eval(off, y[lo:], eff, 0.0)
    return out


def detect_plateau(curve, q_step, window, flat_tolerance):
    """Index where a smoothed contrast curve first flattens after its rise.

    The gradient is estimated by central differences over the candidate
    spacing (one-sided at the ends).  Starting at the index of the maximum
    gradient (index 0 if the curve never meaningfully rises), the first index
    whose next ``window`` gradients all stay within ``flat_tolerance`` of zero
    is returned.  Raises :class:`NoPlateauError` when no such run exists;
    falling back to the last candidate would silently delete geometry.
    """
    curve = np.asarray(curve, dtype=np.float64)
    if curve.ndim != 1 or len(curve) < 2 * window:
        raise ValueError(f"curve must hold at least {2 * window} values, got {curve.shape}")
    grad = np.gradient(curve, q_step)
    rise = int(np.argmax(grad))
    if grad[rise] <= flat_tolerance:
        rise = 0
    flat = (np.abs(grad) <= flat_tolerance).astype(np.int64)
    runs = np.cumsum(flat)
    for i in range(rise, len(curve) - window + 1):
        if runs[i + window - 1] - (runs[i - 1] if i else 0) == window:
            return i
    raise NoPlateauError(
        f"no run of {window} near-zero gradients (tolerance {flat_tolerance}) "
        f"after the maximum-gradient index {rise}"
    )


def sample_ray_cache(field, cameras, batch_size, rng_seed, n_samples=128):
    """Cache stratified samples for a seeded uniform batch of pixel rays.

    Rays are drawn with replacement from the joint pixel grid of all cameras;
    the field is queried exactly once per cached sample.
    """
    if not cameras:
        raise ValueError("at least one camera is required")
    rng = np.random.default_rng(rng_seed)
    counts = np.array([c.width * c.height for c in cameras])
    cum = np.cumsum(counts)
    flat = rng.integers(0, cum[-1], size=batch_size)
    cam_idx = np.searchsorted(cum, flat, side="right")
    local = flat - np.concatenate([[0], cum[:-1]])[cam_idx]

    origins = np.empty((batch_size, 3))
    dirs = np.empty((batch_size, 3))
    nears = np.empty(batch_size)
    fars = np.empty(batch_size)
    for k, cam in enumerate(cameras):
        sel = cam_idx == k
        if not np.any(sel):
            continue
        px = local[sel] % cam.width
        py = local[sel] // cam.width
        o, d = camera_rays(cam, np.stack([px, py], axis=-1))
        origins[sel] = o
        dirs[sel] = d
        nears[sel] = cam.near
        fars[sel] = cam.far
    return sample_ray_batch(field, origins, dirs, nears, fars, n_samples)


def contrast_sweep(samples, candidates):
    """Michelson contrast of recomposited cached samples per candidate threshold."""
    kappa = np.empty(len(candidates))
    for i, q in enumerate(candidates):
        colors, _, _ = composite_arrays(samples.t, samples.delta, samples.sigma, samples.color, q)
        kappa[i] = michelson(luminance(colors))
    return kappa


def estimate_threshold(field, cameras, cfg=None, n_samples=128):
    """Estimate the fog-removal density threshold for a trained field.

    Returns ``(threshold, curve)``.  The sweep costs one ray batch regardless
    of how many thresholds are tested: samples are cached once, then cheaply
    recomposited per candidate.
    """
    cfg = cfg or ThresholdConfig()
    samples = sample_ray_cache(field, cameras, cfg.batch_size, cfg.rng_seed, n_samples)
    candidates = cfg.candidates()
    kappa_raw = contrast_sweep(samples, candidates)
    kappa_smooth = savgol_smooth(kappa_raw, cfg.savgol_window, cfg.savgol_order)
    idx = detect_plateau(kappa_smooth, cfg.q_step, cfg.savgol_window, cfg.flat_tolerance)
    detected = float(candidates[idx])
    curve = ContrastCurve(
        sigma_thre=candidates,
        kappa_raw=kappa_raw,
        kappa_smooth=kappa_smooth,
        detected=detected,
    )
    return detected, curve
