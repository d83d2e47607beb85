"""Occupancy-based differentiable volume rendering along camera rays.

Per-sample weights follow w_i = o_i * T_i with T_i = prod_{j<i}(1 - o_j);
colour, depth, and semantics are the weight-sums of the per-point field
values.  Shared by the trainer (tracked), the planner, and the evaluator
(plain arrays).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractViolation, DomainError, ShapeError
from .scene import CameraModel, camera_rays, write_ppm

NEAR_EPS = 1e-4


# ---------------------------------------------------------------------------
# domain types


@dataclass
class RaySampleSet:
    """One ray's sample points with their field values."""

    origin: np.ndarray
    direction: np.ndarray
    depths: np.ndarray  # (S,), strictly increasing, within [near, far]
    o: np.ndarray  # (S,)
    c: np.ndarray  # (S, 3)
    s: np.ndarray  # (S, P)
    near: float
    far: float

    def validate(self):
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-6:
            raise ContractViolation("ray direction must be unit length")
        if np.any(np.diff(self.depths) <= 0):
            raise ContractViolation("sample depths must be strictly increasing")
        if self.depths[0] < self.near - 1e-9 or self.depths[-1] > self.far + 1e-9:
            raise ContractViolation("sample depths outside [near, far]")


@dataclass
class RenderedPixel:
    c: np.ndarray
    d: float
    s: np.ndarray
    a: float


@dataclass
class RenderedRays:
    """Batched render output; rows of rays that missed the box are zero."""

    rgb: np.ndarray  # (N, 3)
    depth: np.ndarray  # (N,)
    sem: np.ndarray  # (N, P)
    alpha: np.ndarray  # (N,)
    hit: np.ndarray  # (N,) bool
    depths: np.ndarray | None = None  # (N, S)
    occ: np.ndarray | None = None  # (N, S)
    trans: np.ndarray | None = None  # (N, S)
    weights: np.ndarray | None = None  # (N, S)


@dataclass
class RenderedView:
    rgb: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W)
    sem: np.ndarray  # (H, W, P)
    alpha: np.ndarray  # (H, W)

    def class_raster(self):
        """Per-pixel argmax class id (1-based)."""
        return np.argmax(self.sem, axis=-1).astype(np.int16) + 1


# ---------------------------------------------------------------------------
# geometry


def ray_box_intersect(origin, dirs, bbox_min, bbox_max, near_eps=NEAR_EPS):
    """Slab intersection. Returns (t_near, t_far, hit); t_near >= near_eps."""
    dirs = np.asarray(dirs, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    d = np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
    t1 = (bbox_min - origin) / d
    t2 = (bbox_max - origin) / d
    t_near = np.maximum(np.minimum(t1, t2).max(axis=-1), near_eps)
    t_far = np.maximum(t1, t2).min(axis=-1)
    hit = t_far > t_near
    return t_near, t_far, hit


def sample_depths(t_near, t_far, n_samples, rng=None):
    """Stratified depths along each ray: midpoints, or jittered when rng given."""
    if n_samples < 2:
        raise DomainError("need at least 2 samples per ray")
    n = t_near.shape[0]
    if rng is None:
        offsets = np.full((n, n_samples), 0.5)
    else:
        offsets = rng.uniform(size=(n, n_samples))
    steps = (np.arange(n_samples)[None, :] + offsets) / n_samples
    return t_near[:, None] + steps * (t_far - t_near)[:, None]


# ---------------------------------------------------------------------------
# single-ray reference path


def render_ray(samples: RaySampleSet) -> RenderedPixel:
    """Composite one ray; the batched paths reduce to this per row."""
    samples.validate()
    w, _ = ad.compositing(samples.o[None, :])
    w = w.data[0]
    c = w @ samples.c
    d = float(w @ samples.depths)
    s = w @ samples.s
    return RenderedPixel(c=c, d=d, s=s, a=float(w.sum()))


# ---------------------------------------------------------------------------
# batched rendering


def render_rays(
    model, origin, dirs, n_samples, rng=None, keep_samples=False, with_rgb=True, with_sem=True
):
    """Render a batch of rays against the model, no gradient tracking.

    origin: a shared (3,) camera centre or per-ray (N, 3) origins.  Heads
    switched off leave their output channels at zero.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    origins = np.broadcast_to(np.asarray(origin, dtype=np.float64), dirs.shape)
    n = dirs.shape[0]
    p = model.n_classes
    t_near, t_far, hit = ray_box_intersect(origins, dirs, model.bbox_min, model.bbox_max)

    out = RenderedRays(
        rgb=np.zeros((n, 3)),
        depth=np.zeros(n),
        sem=np.zeros((n, p)),
        alpha=np.zeros(n),
        hit=hit,
    )
    if keep_samples:
        out.depths = np.zeros((n, n_samples))
        out.occ = np.zeros((n, n_samples))
        out.trans = np.zeros((n, n_samples))
        out.weights = np.zeros((n, n_samples))
    if not np.any(hit):
        return out

    depths = sample_depths(t_near[hit], t_far[hit], n_samples, rng)
    pts = origins[hit][:, None, :] + depths[:, :, None] * dirs[hit][:, None, :]
    o_flat, c_flat, s_flat = model.query_batch(pts.reshape(-1, 3), with_rgb, with_sem)

    nh = depths.shape[0]
    occ = o_flat.reshape(nh, n_samples).astype(np.float64)
    w_var, t_var = ad.compositing(occ)
    w, trans = w_var.data, t_var.data

    if with_rgb:
        out.rgb[hit] = np.einsum("ns,nsc->nc", w, c_flat.reshape(nh, n_samples, 3))
    out.depth[hit] = np.einsum("ns,ns->n", w, depths)
    if with_sem:
        out.sem[hit] = np.einsum("ns,nsp->np", w, s_flat.reshape(nh, n_samples, p))
    out.alpha[hit] = w.sum(axis=1)
    if keep_samples:
        out.depths[hit] = depths
        out.occ[hit] = occ
        out.trans[hit] = trans
        out.weights[hit] = w
    return out


def render_rays_tracked(model, origin, dirs, n_samples, rng):
    """Differentiable batched render for training.

    Rays that miss the bounding box carry no samples and no gradient; they are
    dropped here.  Returns (hit mask, dict of tracked values for the hit rays).
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    origins = np.broadcast_to(np.asarray(origin, dtype=np.float64), dirs.shape)
    t_near, t_far, hit = ray_box_intersect(origins, dirs, model.bbox_min, model.bbox_max)
    if not np.any(hit):
        return hit, None

    depths = sample_depths(t_near[hit], t_far[hit], n_samples, rng)
    nh, s = depths.shape
    pts = origins[hit][:, None, :] + depths[:, :, None] * dirs[hit][:, None, :]
    o_var, c_var, s_var = model.query_batch_tracked(pts.reshape(-1, 3))

    occ = ad.reshape(o_var, (nh, s))
    w, trans = ad.compositing(occ)
    rgb = ad.weighted_sum(w, ad.reshape(c_var, (nh, s, 3)))
    depth = ad.sum_axis(ad.mul(w, depths.astype(model.dtype)), 1)
    sem = ad.weighted_sum(w, ad.reshape(s_var, (nh, s, model.n_classes)))
    alpha = ad.sum_axis(w, 1)
    return hit, {
        "rgb": rgb,
        "depth": depth,
        "sem": sem,
        "alpha": alpha,
        "weights": w,
        "trans": trans,
        "occ": occ,
        "depths": depths,
    }


def render_view(model, pose, width, height, n_samples, camera=None, chunk=8192):
    """Full-image render; rays that miss the scene box come back black."""
    if camera is None:
        camera = CameraModel.square(width)
    if camera.width != width or camera.height != height:
        raise ShapeError("camera resolution does not match requested image size")
    origin, dirs = camera_rays(camera, pose)
    n = dirs.shape[0]
    rgb = np.zeros((n, 3))
    depth = np.zeros(n)
    sem = np.zeros((n, model.n_classes))
    alpha = np.zeros(n)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        rr = render_rays(model, origin, dirs[lo:hi], n_samples)
        rgb[lo:hi] = rr.rgb
        depth[lo:hi] = rr.depth
        sem[lo:hi] = rr.sem
        alpha[lo:hi] = rr.alpha
    return RenderedView(
        rgb=rgb.reshape(height, width, 3),
        depth=depth.reshape(height, width),
        sem=sem.reshape(height, width, model.n_classes),
        alpha=alpha.reshape(height, width),
    )


# ---------------------------------------------------------------------------
# visualization export

# fixed class -> colour palette (class ids 1..8); index 0 unused
CLASS_PALETTE = np.array(
    [
        [0.0, 0.0, 0.0],
        [0.90, 0.10, 0.10],
        [0.10, 0.60, 0.90],
        [0.95, 0.75, 0.10],
        [0.20, 0.80, 0.30],
        [0.70, 0.25, 0.85],
        [0.95, 0.45, 0.10],
        [0.55, 0.55, 0.55],
    ]
)


def write_class_raster(path, class_ids):
    """Class-id image -> colour-mapped portable pixmap."""
    ids = np.clip(np.asarray(class_ids, dtype=np.int32), 0, len(CLASS_PALETTE) - 1)
    write_ppm(path, CLASS_PALETTE[ids])
