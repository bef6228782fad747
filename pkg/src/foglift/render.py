"""Pinhole cameras, per-pixel rays, and volume-rendering quadrature.

The compositor implements emission-absorption quadrature over per-ray
samples, with an optional density threshold that zeroes every sample whose
density falls strictly below the cutoff before accumulation.  A threshold of
zero reproduces the plain quadrature exactly.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

_CHUNK_RAYS = 16384


def thread_count():
    """Worker cap from FOGLIFT_THREADS; 1 (serial, reference mode) by default."""
    raw = os.environ.get("FOGLIFT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"FOGLIFT_THREADS must be an integer, got {raw!r}")
    return max(1, n)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: resolution, horizontal FOV, camera-to-world pose.

    The camera looks along its local -Z axis with +X right and +Y up.
    ``near``/``far`` bound the sampled segment of every pixel ray.
    """

    width: int
    height: int
    camera_angle_x: float
    transform: np.ndarray
    near: float
    far: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("camera resolution must be positive")
        if not 0 < self.camera_angle_x < np.pi:
            raise ValueError(f"camera_angle_x must be in (0, pi), got {self.camera_angle_x}")
        if not self.near < self.far:
            raise ValueError(f"near must be below far, got {self.near} >= {self.far}")
        mat = np.asarray(self.transform, dtype=np.float64)
        if mat.shape != (4, 4):
            raise ValueError(f"transform must be 4x4, got {mat.shape}")
        rot = mat[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
            raise ValueError("rotation block of the transform is not orthonormal")
        mat = mat.copy()
        mat.setflags(write=False)
        object.__setattr__(self, "transform", mat)

    @property
    def focal(self):
        """Focal length in pixels for the horizontal axis."""
        return self.width / (2.0 * np.tan(self.camera_angle_x / 2.0))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    near: float
    far: float

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length, |d| = {np.linalg.norm(d)}")
        if not self.near < self.far:
            raise ValueError(f"near must be below far, got {self.near} >= {self.far}")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class RaySamples:
    """Per-ray sample arrays; a leading batch dimension is allowed.

    ``t`` is strictly increasing along the last axis, ``delta`` holds the
    positive spacing assigned to each sample, ``sigma`` the non-negative
    densities and ``color`` the linear-RGB emissions (one extra trailing
    channel axis).
    """

    t: np.ndarray
    delta: np.ndarray
    sigma: np.ndarray
    color: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        delta = np.asarray(self.delta, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        color = np.asarray(self.color, dtype=np.float64)
        if t.shape[-1] < 1:
            raise ValueError("need at least one sample per ray")
        if not (t.shape == delta.shape == sigma.shape == color.shape[:-1]):
            raise ValueError("sample arrays must share their shape")
        if color.shape[-1] != 3:
            raise ValueError("color must have a trailing channel axis of size 3")
        if t.shape[-1] > 1 and not np.all(np.diff(t, axis=-1) > 0):
            raise ValueError("sample distances must be strictly increasing")
        if not np.all(delta > 0):
            raise ValueError("sample spacings must be positive")
        if np.any(sigma < 0):
            raise ValueError("densities must be non-negative")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "color", color)

    @property
    def n_samples(self):
        return self.t.shape[-1]


def pixel_ray(cam, px, py):
    """Ray through the center of pixel (px, py)."""
    if not (0 <= px < cam.width and 0 <= py < cam.height):
        raise ValueError(f"pixel ({px}, {py}) outside {cam.width}x{cam.height} image")
    origins, dirs = camera_rays(cam, np.asarray([[px, py]], dtype=np.float64))
    return Ray(origin=origins[0], direction=dirs[0], near=cam.near, far=cam.far)


def camera_rays(cam, pixels):
    """World-space (origins, unit directions) for an (M, 2) array of pixel coords."""
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    focal = cam.focal
    x = (pixels[:, 0] + 0.5 - cam.width / 2.0) / focal
    y = -(pixels[:, 1] + 0.5 - cam.height / 2.0) / focal
    d_cam = np.stack([x, y, -np.ones_like(x)], axis=-1)
    rot = cam.transform[:3, :3]
    d = d_cam @ rot.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(cam.transform[:3, 3], d.shape).copy()
    return o, d


def strata_points(near, far, n, jitter_u=None):
    """Sample distances in N equal strata of [near, far]; midpoints by default."""
    width = (far - near) / n
    offsets = jitter_u if jitter_u is not None else 0.5
    return near + (np.arange(n) + offsets) * width


def sample_ray(field, ray, n_samples, jitter=False, rng_seed=0):
    """Stratified field samples along one ray.

    Each of ``n_samples`` equal strata of [near, far] contributes one sample:
    its midpoint, or a seeded uniform draw within the stratum when ``jitter``
    is set.  Every sample's spacing is the distance to its successor; the last
    sample gets the stratum width.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    jitter_u = None
    if jitter:
        jitter_u = np.random.default_rng(rng_seed).random(n_samples)
    t = strata_points(ray.near, ray.far, n_samples, jitter_u)
    width = (ray.far - ray.near) / n_samples
    delta = np.empty(n_samples)
    delta[:-1] = np.diff(t)
    delta[-1] = width
    pts = ray.origin + t[:, None] * ray.direction
    sigma, color = field.query_many(pts)
    return RaySamples(t=t, delta=delta, sigma=sigma, color=color)


def sample_ray_batch(field, origins, dirs, nears, fars, n_samples, jitter_u=None):
    """Vectorized sampling for (B, 3) origins/directions with per-ray bounds."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    origins = np.atleast_2d(origins)
    dirs = np.atleast_2d(dirs)
    nears = np.broadcast_to(np.asarray(nears, dtype=np.float64), origins.shape[:1])
    fars = np.broadcast_to(np.asarray(fars, dtype=np.float64), origins.shape[:1])
    width = (fars - nears) / n_samples
    offsets = jitter_u if jitter_u is not None else 0.5
    t = nears[:, None] + (np.arange(n_samples) + offsets) * width[:, None]
    delta = np.empty_like(t)
    delta[:, :-1] = np.diff(t, axis=-1)
    delta[:, -1] = width
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    sigma, color = field.query_many(pts.reshape(-1, 3))
    return RaySamples(
        t=t,
        delta=delta,
        sigma=sigma.reshape(t.shape),
        color=color.reshape(t.shape + (3,)),
    )


def composite(samples, threshold=0.0):
    """Accumulate per-ray color, opacity, and expected depth.

    Densities below ``threshold`` are zeroed before compositing (kept when
    exactly equal).  Returns ``(color, alpha, depth)`` with shapes matching
    the batch layout of ``samples``; depth is the opacity-weighted mean
    sample distance, 0 for fully transparent rays.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    return composite_arrays(samples.t, samples.delta, samples.sigma, samples.color, threshold)


def composite_arrays(t, delta, sigma, color, threshold=0.0):
    """Quadrature on raw sample arrays; see :func:`composite`."""
    sig = np.where(sigma >= threshold, sigma, 0.0) if threshold > 0 else sigma
    tau = sig * delta
    accum = np.cumsum(tau, axis=-1)
    # exclusive prefix: transmittance before each sample
    trans = np.exp(-(accum - tau))
    weights = trans * (1.0 - np.exp(-tau))
    out_color = np.einsum("...n,...nc->...c", weights, color)
    alpha = np.sum(weights, axis=-1)
    depth_sum = np.sum(weights * t, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        depth = np.where(alpha > 0, depth_sum / np.where(alpha > 0, alpha, 1.0), 0.0)
    return out_color, alpha, depth


def render_image(field, cam, n_samples=128, threshold=0.0, jitter=False, rng_seed=0):
    """Render (rgb, alpha, depth) images for every pixel of a camera.

    Deterministic for a fixed seed: jitter offsets are drawn once up front,
    so results do not depend on chunking or the worker count.
    """
    h, w = cam.height, cam.width
    ys, xs = np.mgrid[0:h, 0:w]
    pixels = np.stack([xs.ravel(), ys.ravel()], axis=-1).astype(np.float64)
    origins, dirs = camera_rays(cam, pixels)
    n_rays = pixels.shape[0]
    jitter_u = None
    if jitter:
        jitter_u = np.random.default_rng(rng_seed).random((n_rays, n_samples))

    rgb = np.empty((n_rays, 3))
    alpha = np.empty(n_rays)
    depth = np.empty(n_rays)

    def run_chunk(lo):
        hi = min(lo + _CHUNK_RAYS, n_rays)
        u = jitter_u[lo:hi] if jitter_u is not None else None
        samples = sample_ray_batch(
            field, origins[lo:hi], dirs[lo:hi], cam.near, cam.far, n_samples, u
        )
        rgb[lo:hi], alpha[lo:hi], depth[lo:hi] = composite(samples, threshold)

    starts = range(0, n_rays, _CHUNK_RAYS)
    workers = thread_count()
    if workers > 1 and n_rays > _CHUNK_RAYS:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_chunk, starts))
    else:
        for lo in starts:
            run_chunk(lo)
    return rgb.reshape(h, w, 3), alpha.reshape(h, w), depth.reshape(h, w)
