"""Explicit voxel-grid radiance fields and analytic reference scenes.

A :class:`RadianceField` stores density and linear-RGB emission on a bounded
regular grid and answers continuous-position queries by trilinear
interpolation of the eight surrounding voxel centers.  An
:class:`AnalyticScene` is the piecewise-constant ground truth used by the
scene generator: solid primitives embedded in a box of uniform low-density
fog.  Both expose the same ``query_many`` interface, so the renderer and the
threshold estimator accept either.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

FIELD_MAGIC = b"FGNF"
FIELD_VERSION = 1

_HEADER = struct.Struct("<4sI6f3I")


class FieldFormatError(Exception):
    """Raised when a field file is malformed, truncated, or mislabeled."""


def _as_vec3(v, name):
    arr = np.asarray(v, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


def trilinear_weights(bbox_min, bbox_max, dims, points):
    """Corner indices and weights for trilinear interpolation on a voxel grid.

    Voxel centers sit at ``bbox_min + (i + 0.5) * cell``.  Points in the outer
    half-cell shell clamp to the edge voxels, which keeps the interpolant
    continuous up to the bounding box.

    Returns ``(idx, w, inside)`` where ``idx`` is (M, 8) flat voxel indices,
    ``w`` is (M, 8) weights summing to 1, and ``inside`` marks points within
    the (closed) bounding box.
    """
    pts = np.asarray(points, dtype=np.float64)
    squeeze = pts.ndim == 1
    pts = np.atleast_2d(pts)
    dims = np.asarray(dims, dtype=np.int64)
    cell = (bbox_max - bbox_min) / dims
    inside = np.all((pts >= bbox_min) & (pts <= bbox_max), axis=-1)

    u = (pts - bbox_min) / cell - 0.5
    # snap ulp-level drift onto the lattice so voxel-center queries return
    # the stored values exactly
    r = np.rint(u)
    u = np.where(np.abs(u - r) <= 1e-9, r, u)
    i0 = np.clip(np.floor(u).astype(np.int64), 0, np.maximum(dims - 2, 0))
    frac = np.clip(u - i0, 0.0, 1.0)
    i1 = np.minimum(i0 + 1, dims - 1)

    ny, nz = int(dims[1]), int(dims[2])
    base0 = (i0[:, 0] * ny + i0[:, 1]) * nz
    base1 = (i1[:, 0] * ny + i0[:, 1]) * nz
    base2 = (i0[:, 0] * ny + i1[:, 1]) * nz
    base3 = (i1[:, 0] * ny + i1[:, 1]) * nz
    z0, z1 = i0[:, 2], i1[:, 2]
    idx = np.stack(
        [base0 + z0, base0 + z1, base2 + z0, base2 + z1,
         base1 + z0, base1 + z1, base3 + z0, base3 + z1],
        axis=-1,
    )

    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    w = np.stack(
        [gx * gy * gz, gx * gy * fz, gx * fy * gz, gx * fy * fz,
         fx * gy * gz, fx * gy * fz, fx * fy * gz, fx * fy * fz],
        axis=-1,
    )
    if squeeze:
        return idx[0], w[0], inside[0]
    return idx, w, inside


@dataclass(frozen=True)
class RadianceField:
    """Bounded voxel grid of (density, linear RGB), immutable once built.

    ``density`` has shape ``dims`` with non-negative values per unit length;
    ``rgb`` has shape ``dims + (3,)`` with channels in [0, 1].  Arrays and
    bounds are stored in float32 so that serialization round-trips
    bit-exactly.  Queries outside the bounding box return zero density and
    black.
    """

    bbox_min: np.ndarray
    bbox_max: np.ndarray
    density: np.ndarray
    rgb: np.ndarray

    def __post_init__(self):
        bmin = _as_vec3(self.bbox_min, "bbox_min").astype(np.float32).astype(np.float64)
        bmax = _as_vec3(self.bbox_max, "bbox_max").astype(np.float32).astype(np.float64)
        if not np.all(bmin < bmax):
            raise ValueError(f"bbox_min must be < bbox_max componentwise: {bmin} vs {bmax}")
        density = np.ascontiguousarray(self.density, dtype=np.float32)
        rgb = np.ascontiguousarray(self.rgb, dtype=np.float32)
        if density.ndim != 3:
            raise ValueError(f"density must be a 3-D array, got shape {density.shape}")
        if rgb.shape != density.shape + (3,):
            raise ValueError(
                f"rgb shape {rgb.shape} does not match density shape {density.shape} + (3,)"
            )
        if np.any(density < 0):
            raise ValueError("density values must be non-negative")
        if np.any(rgb < 0) or np.any(rgb > 1):
            raise ValueError("rgb channels must lie in [0, 1]")
        for arr in (bmin, bmax, density, rgb):
            arr.setflags(write=False)
        object.__setattr__(self, "bbox_min", bmin)
        object.__setattr__(self, "bbox_max", bmax)
        object.__setattr__(self, "density", density)
        object.__setattr__(self, "rgb", rgb)

    @property
    def dims(self):
        return self.density.shape

    def query_many(self, points):
        """Trilinear (sigma, rgb) at an (M, 3) array of world positions."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        idx, w, inside = trilinear_weights(self.bbox_min, self.bbox_max, self.dims, pts)
        dens = self.density.reshape(-1).astype(np.float64)
        cols = self.rgb.reshape(-1, 3).astype(np.float64)
        sigma = np.einsum("mk,mk->m", w, dens[idx])
        rgb = np.einsum("mk,mkc->mc", w, cols[idx])
        sigma = np.where(inside, sigma, 0.0)
        rgb = np.where(inside[:, None], rgb, 0.0)
        np.clip(rgb, 0.0, 1.0, out=rgb)
        return sigma, rgb

    def query(self, p):
        """(sigma, rgb) at a single world position."""
        sigma, rgb = self.query_many(np.asarray(p, dtype=np.float64).reshape(1, 3))
        return float(sigma[0]), rgb[0]


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    solid_sigma: float
    albedo: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", _as_vec3(self.center, "center"))
        object.__setattr__(self, "albedo", _as_vec3(self.albedo, "albedo"))
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")
        if self.solid_sigma <= 0:
            raise ValueError("solid_sigma must be positive")

    def contains(self, pts):
        d = pts - self.center
        return np.einsum("...c,...c->...", d, d) <= self.radius * self.radius

    def ray_entry(self, origins, dirs):
        """Distance to first surface hit per unit-direction ray, inf on miss."""
        oc = origins - self.center
        b = np.einsum("...c,...c->...", oc, dirs)
        c = np.einsum("...c,...c->...", oc, oc) - self.radius * self.radius
        disc = b * b - c
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        t = np.where(t0 > 0, t0, t1)
        return np.where(hit & (t > 0), t, np.inf)


@dataclass(frozen=True)
class Box:
    center: np.ndarray
    half_size: np.ndarray
    solid_sigma: float
    albedo: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", _as_vec3(self.center, "center"))
        object.__setattr__(self, "half_size", _as_vec3(self.half_size, "half_size"))
        object.__setattr__(self, "albedo", _as_vec3(self.albedo, "albedo"))
        if np.any(self.half_size <= 0):
            raise ValueError("box half_size must be positive componentwise")
        if self.solid_sigma <= 0:
            raise ValueError("solid_sigma must be positive")

    def contains(self, pts):
        return np.all(np.abs(pts - self.center) <= self.half_size, axis=-1)

    def ray_entry(self, origins, dirs):
        """Slab-test entry distance per unit-direction ray, inf on miss."""
        lo = self.center - self.half_size
        hi = self.center + self.half_size
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t_lo = (lo - origins) * inv
            t_hi = (hi - origins) * inv
        # Parallel rays: +-inf slabs resolve correctly through min/max below,
        # except the NaN from 0 * inf when the origin sits on a slab plane.
        t_near = np.nanmax(np.minimum(t_lo, t_hi), axis=-1)
        t_far = np.nanmin(np.maximum(t_lo, t_hi), axis=-1)
        hit = (t_near <= t_far) & (t_far > 0)
        t = np.where(t_near > 0, t_near, t_far)
        return np.where(hit & (t > 0), t, np.inf)


@dataclass(frozen=True)
class AnalyticScene:
    """Piecewise-constant field: solid primitives inside a box of uniform fog.

    Overlapping primitives resolve to the last list entry.  Fog density must
    stay strictly below every solid density so the two populations are
    separable by a single threshold.
    """

    fog_sigma: float
    fog_color: np.ndarray
    fog_bbox_min: np.ndarray
    fog_bbox_max: np.ndarray
    primitives: tuple

    def __post_init__(self):
        object.__setattr__(self, "fog_color", _as_vec3(self.fog_color, "fog_color"))
        object.__setattr__(self, "fog_bbox_min", _as_vec3(self.fog_bbox_min, "fog_bbox_min"))
        object.__setattr__(self, "fog_bbox_max", _as_vec3(self.fog_bbox_max, "fog_bbox_max"))
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if self.fog_sigma < 0:
            raise ValueError("fog_sigma must be non-negative")
        if not np.all(self.fog_bbox_min < self.fog_bbox_max):
            raise ValueError("fog bounding box must have positive extent")
        if self.primitives:
            min_solid = min(p.solid_sigma for p in self.primitives)
            if self.fog_sigma >= min_solid:
                raise ValueError(
                    f"fog_sigma {self.fog_sigma} must be below the weakest solid {min_solid}"
                )

    def query_many(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = pts.shape[0]
        sigma = np.zeros(n)
        rgb = np.zeros((n, 3))
        in_fog = np.all((pts >= self.fog_bbox_min) & (pts <= self.fog_bbox_max), axis=-1)
        sigma[in_fog] = self.fog_sigma
        rgb[in_fog] = self.fog_color
        for prim in self.primitives:
            mask = prim.contains(pts)
            sigma[mask] = prim.solid_sigma
            rgb[mask] = prim.albedo
        return sigma, rgb

    def query(self, p):
        sigma, rgb = self.query_many(np.asarray(p, dtype=np.float64).reshape(1, 3))
        return float(sigma[0]), rgb[0]

    def hit_distances(self, origins, dirs):
        """Per-ray distance to the first solid primitive, inf where none is hit."""
        origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
        dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
        t = np.full(origins.shape[0], np.inf)
        for prim in self.primitives:
            np.minimum(t, prim.ray_entry(origins, dirs), out=t)
        return t


def voxel_centers(bbox_min, bbox_max, dims):
    """(nx*ny*nz, 3) voxel-center positions in x-major, z-fastest order."""
    bbox_min = _as_vec3(bbox_min, "bbox_min")
    bbox_max = _as_vec3(bbox_max, "bbox_max")
    dims = tuple(int(d) for d in dims)
    cell = (bbox_max - bbox_min) / np.asarray(dims)
    axes = [bbox_min[a] + (np.arange(dims[a]) + 0.5) * cell[a] for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=-1)


def bake(scene, dims, bbox_min, bbox_max):
    """Sample an analytic scene at voxel centers into a RadianceField."""
    dims = tuple(int(d) for d in dims)
    if any(d < 2 for d in dims):
        raise ValueError(f"grid needs at least 2 voxels per axis, got {dims}")
    pts = voxel_centers(bbox_min, bbox_max, dims)
    sigma, rgb = scene.query_many(pts)
    return RadianceField(
        bbox_min=np.asarray(bbox_min, dtype=np.float64),
        bbox_max=np.asarray(bbox_max, dtype=np.float64),
        density=sigma.reshape(dims),
        rgb=rgb.reshape(dims + (3,)),
    )


def save_field(field, path):
    """Write a field as little-endian binary (magic FGNF, version 1).

    Layout: magic, u32 version, bbox as 6 f32, dims as 3 u32, density as f32
    with x varying fastest, then interleaved RGB f32 triples in the same
    voxel order.
    """
    dims = field.dims
    header = _HEADER.pack(
        FIELD_MAGIC,
        FIELD_VERSION,
        *np.concatenate([field.bbox_min, field.bbox_max]).astype(np.float32),
        *dims,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(field.density.transpose(2, 1, 0)).tobytes())
        fh.write(np.ascontiguousarray(field.rgb.transpose(2, 1, 0, 3)).tobytes())


def load_field(path):
    """Read a field written by :func:`save_field`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FieldFormatError(f"file too short for header: {len(raw)} bytes")
    magic, version, *rest = _HEADER.unpack_from(raw)
    if magic != FIELD_MAGIC:
        raise FieldFormatError(f"bad magic {magic!r}, expected {FIELD_MAGIC!r}")
    if version != FIELD_VERSION:
        raise FieldFormatError(f"unsupported field version {version}")
    bbox = np.asarray(rest[:6], dtype=np.float64)
    dims = tuple(int(d) for d in rest[6:9])
    if any(d < 1 for d in dims):
        raise FieldFormatError(f"non-positive grid dims {dims}")
    nvox = dims[0] * dims[1] * dims[2]
    expected = _HEADER.size + 4 * nvox + 12 * nvox
    if len(raw) != expected:
        raise FieldFormatError(
            f"file size {len(raw)} does not match {expected} for dims {dims}"
        )
    off = _HEADER.size
    density = np.frombuffer(raw, dtype="<f4", count=nvox, offset=off)
    density = density.reshape(dims[2], dims[1], dims[0]).transpose(2, 1, 0)
    off += 4 * nvox
    rgb = np.frombuffer(raw, dtype="<f4", count=3 * nvox, offset=off)
    rgb = rgb.reshape(dims[2], dims[1], dims[0], 3).transpose(2, 1, 0, 3)
    return RadianceField(bbox_min=bbox[:3], bbox_max=bbox[3:], density=density, rgb=rgb)
