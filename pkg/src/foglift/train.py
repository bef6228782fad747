"""Fitting a voxel radiance field to posed images by gradient descent.

The trainable parameters are raw per-voxel arrays mapped through a softplus
(density, so non-negativity is structural) and a sigmoid (color).  Each step
renders a random batch of ground-truth pixel rays through the plain
quadrature and applies one SGD update from the analytic gradient of the
summed squared error, chained through the compositing weights and the
trilinear interpolation stencil.

The forward/backward pass is a fused numba kernel over a table of activated
voxel values: per sample it rebuilds the interpolation stencil, marches the
transmittance, and scatters gradients in a fixed sequential order, so fitted
fields are bit-deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .field import RadianceField
from .render import camera_rays

PSNR_CAP = 99.0


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20000
    rays_per_step: int = 1024
    samples_per_ray: int = 64
    learning_rate: float = 500.0
    seed: int = 0
    softplus_beta: float = 8.0

    def __post_init__(self):
        if self.steps < 0 or self.rays_per_step < 1 or self.samples_per_ray < 1:
            raise ValueError("counts must be positive (steps may be 0)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.softplus_beta <= 0:
            raise ValueError("softplus_beta must be positive")


def photometric_loss(pred, gt):
    """Sum over rays of squared linear-RGB channel differences."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return float(np.sum((pred - gt) ** 2))


def _softplus(x, beta):
    # log1p(exp(z)) overflows for large z where softplus(z) = z anyway
    z = beta * np.asarray(x)
    out = np.log1p(np.exp(np.minimum(z, 35.0)))
    return np.where(z > 35.0, z, out) / beta


def _softplus_inv(y, beta):
    return np.log(np.expm1(beta * y)) / beta


def _sigmoid(x):
    e = np.exp(np.minimum(-np.asarray(x), 35.0))
    return 1.0 / (1.0 + e)


@dataclass(frozen=True)
class RayBatch:
    """Geometry and targets of one training batch (parameter independent)."""

    origins: np.ndarray  # (B, 3)
    dirs: np.ndarray     # (B, 3)
    t: np.ndarray        # (B, N) sample distances
    delta: np.ndarray    # (B, N) sample spacings
    gt: np.ndarray       # (B, 3) target colors

    @property
    def n_rays(self):
        return self.t.shape[0]


@njit(cache=True, nogil=True)
def _run_rays(table, origins, dirs, t, delta, gt, bbox_min, bbox_max, dims,
              grad, pred, want_grads):
    """Fused forward/backward over a ray batch.

    ``table`` holds per voxel [sigma, r, g, b, dsigma/dparam]; ``grad``
    accumulates [dL/dp_sigma, dL/dp_r, dL/dp_g, dL/dp_b] per voxel.  Returns
    the summed squared error.  Iteration order is fixed, so results are
    reproducible bit for bit.
    """
    n_rays, n_samples = t.shape
    nx, ny, nz = dims[0], dims[1], dims[2]
    cell_x = (bbox_max[0] - bbox_min[0]) / nx
    cell_y = (bbox_max[1] - bbox_min[1]) / ny
    cell_z = (bbox_max[2] - bbox_min[2]) / nz

    # per-sample scratch reused across rays
    s_sigma = np.empty(n_samples)
    s_col = np.empty((n_samples, 3))
    s_trans = np.empty(n_samples)
    s_absorb = np.empty(n_samples)
    s_wgt = np.empty(n_samples)
    corners = np.empty(8, dtype=np.int64)
    weights = np.empty(8)

    loss = 0.0
    for r in range(n_rays):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        trans = 1.0
        p0 = 0.0
        p1 = 0.0
        p2 = 0.0
        for i in range(n_samples):
            ti = t[r, i]
            px = ox + ti * dx
            py = oy + ti * dy
            pz = oz + ti * dz
            sig = 0.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            if (bbox_min[0] <= px <= bbox_max[0]
                    and bbox_min[1] <= py <= bbox_max[1]
                    and bbox_min[2] <= pz <= bbox_max[2]):
                ux = (px - bbox_min[0]) / cell_x - 0.5
                uy = (py - bbox_min[1]) / cell_y - 0.5
                uz = (pz - bbox_min[2]) / cell_z - 0.5
                ix = min(max(int(np.floor(ux)), 0), max(nx - 2, 0))
                iy = min(max(int(np.floor(uy)), 0), max(ny - 2, 0))
                iz = min(max(int(np.floor(uz)), 0), max(nz - 2, 0))
                fx = min(max(ux - ix, 0.0), 1.0)
                fy = min(max(uy - iy, 0.0), 1.0)
                fz = min(max(uz - iz, 0.0), 1.0)
                jx = min(ix + 1, nx - 1)
                jy = min(iy + 1, ny - 1)
                jz = min(iz + 1, nz - 1)
                base00 = (ix * ny + iy) * nz
                base01 = (ix * ny + jy) * nz
                base10 = (jx * ny + iy) * nz
                base11 = (jx * ny + jy) * nz
                corners[0] = base00 + iz
                corners[1] = base00 + jz
                corners[2] = base01 + iz
                corners[3] = base01 + jz
                corners[4] = base10 + iz
                corners[5] = base10 + jz
                corners[6] = base11 + iz
                corners[7] = base11 + jz
                gx = 1.0 - fx
                gy = 1.0 - fy
                gz = 1.0 - fz
                weights[0] = gx * gy * gz
                weights[1] = gx * gy * fz
                weights[2] = gx * fy * gz
                weights[3] = gx * fy * fz
                weights[4] = fx * gy * gz
                weights[5] = fx * gy * fz
                weights[6] = fx * fy * gz
                weights[7] = fx * fy * fz
                for k in range(8):
                    j = corners[k]
                    wk = weights[k]
                    sig += wk * table[j, 0]
                    c0 += wk * table[j, 1]
                    c1 += wk * table[j, 2]
                    c2 += wk * table[j, 3]
            tau = sig * delta[r, i]
            absorb = np.exp(-tau)
            wgt = trans * (1.0 - absorb)
            p0 += wgt * c0
            p1 += wgt * c1
            p2 += wgt * c2
            s_sigma[i] = sig
            s_col[i, 0] = c0
            s_col[i, 1] = c1
            s_col[i, 2] = c2
            s_trans[i] = trans
            s_absorb[i] = absorb
            s_wgt[i] = wgt
            trans *= absorb
        pred[r, 0] = p0
        pred[r, 1] = p1
        pred[r, 2] = p2
        e0 = p0 - gt[r, 0]
        e1 = p1 - gt[r, 1]
        e2 = p2 - gt[r, 2]
        loss += e0 * e0 + e1 * e1 + e2 * e2
        if not want_grads:
            continue
        r0 = 2.0 * e0
        r1 = 2.0 * e1
        r2 = 2.0 * e2
        suffix = 0.0
        for i in range(n_samples - 1, -1, -1):
            score = r0 * s_col[i, 0] + r1 * s_col[i, 1] + r2 * s_col[i, 2]
            d_sig = delta[r, i] * (s_trans[i] * s_absorb[i] * score - suffix)
            suffix += s_wgt[i] * score
            ti = t[r, i]
            px = ox + ti * dx
            py = oy + ti * dy
            pz = oz + ti * dz
            if not (bbox_min[0] <= px <= bbox_max[0]
                    and bbox_min[1] <= py <= bbox_max[1]
                    and bbox_min[2] <= pz <= bbox_max[2]):
                continue
            ux = (px - bbox_min[0]) / cell_x - 0.5
            uy = (py - bbox_min[1]) / cell_y - 0.5
            uz = (pz - bbox_min[2]) / cell_z - 0.5
            ix = min(max(int(np.floor(ux)), 0), max(nx - 2, 0))
            iy = min(max(int(np.floor(uy)), 0), max(ny - 2, 0))
            iz = min(max(int(np.floor(uz)), 0), max(nz - 2, 0))
            fx = min(max(ux - ix, 0.0), 1.0)
            fy = min(max(uy - iy, 0.0), 1.0)
            fz = min(max(uz - iz, 0.0), 1.0)
            jx = min(ix + 1, nx - 1)
            jy = min(iy + 1, ny - 1)
            jz = min(iz + 1, nz - 1)
            base00 = (ix * ny + iy) * nz
            base01 = (ix * ny + jy) * nz
            base10 = (jx * ny + iy) * nz
            base11 = (jx * ny + jy) * nz
            corners[0] = base00 + iz
            corners[1] = base00 + jz
            corners[2] = base01 + iz
            corners[3] = base01 + jz
            corners[4] = base10 + iz
            corners[5] = base10 + jz
            corners[6] = base11 + iz
            corners[7] = base11 + jz
            gx = 1.0 - fx
            gy = 1.0 - fy
            gz = 1.0 - fz
            weights[0] = gx * gy * gz
            weights[1] = gx * gy * fz
            weights[2] = gx * fy * gz
            weights[3] = gx * fy * fz
            weights[4] = fx * gy * gz
            weights[5] = fx * gy * fz
            weights[6] = fx * fy * gz
            weights[7] = fx * fy * fz
            dc0 = s_wgt[i] * r0
            dc1 = s_wgt[i] * r1
            dc2 = s_wgt[i] * r2
            for k in range(8):
                j = corners[k]
                wk = weights[k]
                grad[j, 0] += wk * d_sig * table[j, 4]
                cg = table[j, 1]
                grad[j, 1] += wk * dc0 * (cg * (1.0 - cg))
                cg = table[j, 2]
                grad[j, 2] += wk * dc1 * (cg * (1.0 - cg))
                cg = table[j, 3]
                grad[j, 3] += wk * dc2 * (cg * (1.0 - cg))
    return loss


@njit(cache=True, nogil=True)
def _sgd_update(p_sigma, p_rgb, grad, lr, beta, table):
    """Apply one SGD update from ``grad``, refresh touched table rows, and
    zero the consumed gradient entries so the buffer can be reused."""
    for j in range(grad.shape[0]):
        g0 = grad[j, 0]
        g1 = grad[j, 1]
        g2 = grad[j, 2]
        g3 = grad[j, 3]
        if g0 == 0.0 and g1 == 0.0 and g2 == 0.0 and g3 == 0.0:
            continue
        p_sigma[j] -= lr * g0
        p_rgb[j, 0] -= lr * g1
        p_rgb[j, 1] -= lr * g2
        p_rgb[j, 2] -= lr * g3
        grad[j, 0] = 0.0
        grad[j, 1] = 0.0
        grad[j, 2] = 0.0
        grad[j, 3] = 0.0
        z = beta * p_sigma[j]
        if z > 35.0:
            sig = p_sigma[j]
        else:
            sig = np.log1p(np.exp(z)) / beta
        table[j, 0] = sig
        for c in range(3):
            x = -p_rgb[j, c]
            if x > 35.0:
                x = 35.0
            table[j, 1 + c] = 1.0 / (1.0 + np.exp(x))
        table[j, 4] = 1.0 - np.exp(-beta * sig)


class VoxelModel:
    """Trainable voxel grid with softplus density and sigmoid color heads.

    ``dtype`` float32 is the training default; float64 makes the forward pass
    accurate enough for finite-difference verification of the gradients.
    """

    def __init__(self, bbox_min, bbox_max, dims, beta=8.0, init_sigma=0.01,
                 init_rgb=0.5, dtype=np.float32):
        self.bbox_min = np.asarray(bbox_min, dtype=np.float64)
        self.bbox_max = np.asarray(bbox_max, dtype=np.float64)
        self.dims = tuple(int(d) for d in dims)
        self.beta = float(beta)
        self.dtype = np.dtype(dtype)
        nvox = int(np.prod(self.dims))
        self.p_sigma = np.full(nvox, _softplus_inv(init_sigma, self.beta), dtype=self.dtype)
        self.p_rgb = np.full(
            (nvox, 3), float(np.log(init_rgb / (1.0 - init_rgb))), dtype=self.dtype
        )

    def field(self):
        """Freeze current parameters into an immutable RadianceField."""
        sigma = _softplus(self.p_sigma.astype(np.float64), self.beta).reshape(self.dims)
        rgb = _sigmoid(self.p_rgb.astype(np.float64)).reshape(self.dims + (3,))
        return RadianceField(
            bbox_min=self.bbox_min, bbox_max=self.bbox_max, density=sigma, rgb=rgb
        )

    def value_table(self):
        """(nvox, 5) activated [sigma, r, g, b, dsigma/dparam] per voxel."""
        table = np.empty((self.p_sigma.shape[0], 5), dtype=self.dtype)
        table[:, 0] = _softplus(self.p_sigma, self.beta)
        table[:, 1:4] = _sigmoid(self.p_rgb)
        # d softplus / dp = sigmoid(beta p) = 1 - exp(-beta sigma)
        table[:, 4] = 1.0 - np.exp(-self.beta * table[:, 0])
        return table

    def prepare_batch(self, origins, dirs, nears, fars, n_samples, gt, jitter_u=None):
        """Stratified sample distances and targets for a ray batch."""
        origins = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
        dirs = np.ascontiguousarray(np.atleast_2d(dirs), dtype=np.float64)
        b = origins.shape[0]
        nears = np.broadcast_to(np.asarray(nears, dtype=np.float64), (b,))
        fars = np.broadcast_to(np.asarray(fars, dtype=np.float64), (b,))
        width = (fars - nears) / n_samples
        offsets = jitter_u if jitter_u is not None else 0.5
        t = nears[:, None] + (np.arange(n_samples) + offsets) * width[:, None]
        delta = np.empty_like(t)
        delta[:, :-1] = np.diff(t, axis=-1)
        delta[:, -1] = width
        return RayBatch(
            origins=origins,
            dirs=dirs,
            t=t,
            delta=delta,
            gt=np.ascontiguousarray(np.atleast_2d(gt), dtype=np.float64),
        )

    def _run(self, batch, table, want_grads, grad=None, pred=None):
        if table is None:
            table = self.value_table()
        if grad is None:
            grad = np.zeros((1 if not want_grads else table.shape[0], 4), dtype=table.dtype)
        if pred is None:
            pred = np.empty((batch.n_rays, 3))
        dims = np.asarray(self.dims, dtype=np.int64)
        loss = _run_rays(
            table, batch.origins, batch.dirs, batch.t, batch.delta, batch.gt,
            self.bbox_min, self.bbox_max, dims, grad, pred, want_grads,
        )
        return float(loss), grad, pred

    def predict(self, batch, table=None):
        """Rendered colors of the batch rays under the current parameters."""
        _, _, pred = self._run(batch, table, want_grads=False)
        return pred

    def loss(self, batch, table=None):
        loss, _, _ = self._run(batch, table, want_grads=False)
        return loss

    def loss_and_grads(self, batch, table=None):
        """Loss plus analytic gradients w.r.t. the raw parameter arrays."""
        loss, grad, _ = self._run(batch, table, want_grads=True)
        return loss, grad[:, 0], grad[:, 1:]

    def sgd_step(self, batch, learning_rate, table, grad=None, pred=None):
        """Gradient step on one batch; refreshes ``table`` rows in place.

        ``grad``/``pred`` may be persistent scratch buffers; the consumed
        gradient entries are zeroed so the buffer is reusable as-is.
        """
        loss, grad, _ = self._run(batch, table, want_grads=True, grad=grad, pred=pred)
        _sgd_update(self.p_sigma, self.p_rgb, grad, learning_rate, self.beta, table)
        return loss


def _batch_psnr(loss, n_rays):
    mse = loss / (3.0 * n_rays)
    if mse <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(1.0 / mse)))


def _clip_to_bounds(origins, dirs, nears, fars, bbox_min, bbox_max):
    """Tighten per-ray sample ranges to the grid box (slab intersection).

    Samples outside the box contribute nothing, so concentrating the fixed
    per-ray budget on the boxed segment costs nothing and sharpens gradients.
    Rays that miss the box keep their original range.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t_lo = (bbox_min - origins) * inv
        t_hi = (bbox_max - origins) * inv
    enter = np.nanmax(np.minimum(t_lo, t_hi), axis=-1)
    exit_ = np.nanmin(np.maximum(t_lo, t_hi), axis=-1)
    new_near = np.maximum(nears, enter)
    new_far = np.minimum(fars, exit_)
    ok = new_near < new_far
    return np.where(ok, new_near, nears), np.where(ok, new_far, fars)


def _ray_table(dataset, frame_ids):
    """Flattened per-pixel origins, directions, bounds, and targets."""
    origins, dirs, nears, fars, gts = [], [], [], [], []
    for fi in frame_ids:
        cam = dataset.cameras[fi]
        ys, xs = np.mgrid[0:cam.height, 0:cam.width]
        pixels = np.stack([xs.ravel(), ys.ravel()], axis=-1).astype(np.float64)
        o, d = camera_rays(cam, pixels)
        origins.append(o)
        dirs.append(d)
        nears.append(np.full(len(o), cam.near))
        fars.append(np.full(len(o), cam.far))
        gts.append(dataset.images[fi].reshape(-1, 3))
    return (
        np.concatenate(origins),
        np.concatenate(dirs),
        np.concatenate(nears),
        np.concatenate(fars),
        np.concatenate(gts),
    )


def fit(dataset, cfg, dims, bounds=None, on_step=None):
    """Fit a voxel field to the dataset's (foggy) training images.

    Rows reported through ``on_step(step, loss, psnr)``: one per training step
    evaluated before its update, plus a final row at ``step == cfg.steps``
    whose batch is drawn from held-out frames (the test split when present).
    """
    if isinstance(dims, int):
        dims = (dims, dims, dims)
    if bounds is None:
        bounds = dataset.scene_bounds()
    bbox_min, bbox_max = bounds

    train_ids = dataset.frame_indices("train") or list(range(len(dataset.cameras)))
    origins, dirs, nears, fars, gts = _ray_table(dataset, train_ids)
    nears, fars = _clip_to_bounds(origins, dirs, nears, fars, bbox_min, bbox_max)
    n_pool = len(origins)

    model = VoxelModel(bbox_min, bbox_max, dims, beta=cfg.softplus_beta)
    rng = np.random.default_rng(cfg.seed)
    n = cfg.samples_per_ray
    table = model.value_table()
    grad = np.zeros((table.shape[0], 4), dtype=table.dtype)
    pred = np.empty((cfg.rays_per_step, 3))
    for step in range(cfg.steps):
        pick = rng.integers(0, n_pool, size=cfg.rays_per_step)
        jitter = rng.random((cfg.rays_per_step, n))
        batch = model.prepare_batch(
            origins[pick], dirs[pick], nears[pick], fars[pick], n, gts[pick], jitter
        )
        loss = model.sgd_step(batch, cfg.learning_rate, table, grad, pred)
        if on_step is not None:
            on_step(step, loss, _batch_psnr(loss, cfg.rays_per_step))

    if on_step is not None:
        held_ids = dataset.frame_indices("test") or train_ids
        h_origins, h_dirs, h_nears, h_fars, h_gts = _ray_table(dataset, held_ids)
        h_nears, h_fars = _clip_to_bounds(h_origins, h_dirs, h_nears, h_fars, bbox_min, bbox_max)
        pick = rng.integers(0, len(h_origins), size=min(4096, len(h_origins)))
        batch = model.prepare_batch(
            h_origins[pick], h_dirs[pick], h_nears[pick], h_fars[pick], n, h_gts[pick]
        )
        loss = model.loss(batch)
        on_step(cfg.steps, loss, _batch_psnr(loss, len(pick)))
    return model.field()
