"""Reconstruction metrics restricted to the classes of interest.

Quality is measured two ways: novel-view PSNR against simulator ground
truth, and surface precision/completeness/F1 between a marching-cubes mesh
of the occupancy field and points sampled on the true primitives.  Masking
zeroes the occupancy wherever the semantic argmax is not an interesting
class, so clutter never earns credit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from skimage import measure

from . import rendering as rn
from . import scene as sc
from .errors import ConfigError, ShapeError
from .fields import FieldSample

_MSE_FLOOR = 1e-10


@dataclass(frozen=True)
class EvalConfig:
    """Metric parameters; defaults match the full-scale evaluation recipe."""

    n_test_views: int = 100
    iso_threshold: float = 0.5
    dist_threshold: float = 0.01
    n_surface_points: int = 1_000_000
    mesh_resolution: int = 128

    def __post_init__(self):
        if self.iso_threshold <= 0 or self.dist_threshold <= 0:
            raise ConfigError("thresholds must be positive")
        if self.n_surface_points < 1 or self.n_test_views < 1:
            raise ConfigError("sample counts must be >= 1")
        if self.mesh_resolution < 2:
            raise ConfigError("mesh resolution must be at least 2")


@dataclass
class MetricsRecord:
    """Per-step metric row; psnr_db is NaN on steps where it was skipped."""

    step: int
    psnr_db: float
    precision: float
    completeness: float
    f1: float

    def check(self, tol=1e-6):
        for v in (self.precision, self.completeness, self.f1):
            if not 0.0 <= v <= 1.0 + tol:
                raise ConfigError(f"metric outside [0, 1]: {v}")
        s = self.precision + self.completeness
        expect = 0.0 if s == 0 else 2.0 * self.precision * self.completeness / s
        if abs(self.f1 - expect) > tol:
            raise ConfigError("f1 is not the harmonic mean of its parts")


class MaskedMap:
    """Read-only view of a model with uninteresting occupancy forced to 0.

    Quacks enough like the model for the renderer: the mask applies per
    sample point, so masked geometry neither occludes nor colours rays.
    """

    def __init__(self, model, classes):
        self.model = model
        self.classes = np.array(sorted(int(c) for c in classes), dtype=np.int64)
        self.bbox_min = model.bbox_min
        self.bbox_max = model.bbox_max
        self.n_classes = model.n_classes
        self.dtype = model.dtype

    def query_batch(self, points, with_rgb=True, with_sem=True):
        o, c, s = self.model.query_batch(points, with_rgb, with_sem=True)
        keep = np.isin(np.argmax(s, axis=1) + 1, self.classes)
        return np.where(keep, o, 0.0).astype(o.dtype), c, s if with_sem else None


def masked_query(model, point, classes):
    """Single-point field sample with the semantic mask applied."""
    o, c, s = MaskedMap(model, classes).query_batch(
        np.asarray(point, dtype=np.float64)[None, :]
    )
    return FieldSample(o=float(o[0]), c=c[0], s=s[0])


def _interesting_only(scene, classes):
    classes = set(int(c) for c in classes)
    return sc.SceneSpec(
        primitives=tuple(p for p in scene.primitives if p.class_id in classes),
        interesting=frozenset(classes & set(p.class_id for p in scene.primitives)),
        bbox_min=scene.bbox_min,
        bbox_max=scene.bbox_max,
        n_classes=scene.n_classes,
        background_class=scene.background_class,
        seed=scene.seed,
    )


def psnr_from_mse(mse):
    return float(-10.0 * np.log10(max(float(mse), _MSE_FLOOR)))


def novel_view_psnr(
    model, scene, camera, config, n_samples, mask_classes=None, radius=2.0
):
    """Mean PSNR over Fibonacci-lattice test views on the hemisphere.

    With mask_classes set, the model is rendered through the semantic mask
    and ground truth contains only those classes; otherwise both sides use
    the full scene.
    """
    if mask_classes is None:
        render_model, gt_scene = model, scene
    else:
        render_model = MaskedMap(model, mask_classes)
        gt_scene = _interesting_only(scene, mask_classes)
    views = sc.fibonacci_hemisphere(config.n_test_views)
    vals = []
    for az, el in views:
        pose = sc.hemisphere_view(az, el, radius)
        pred = rn.render_view(render_model, pose, camera.width, camera.height, n_samples, camera)
        gt = sc.render_measurement(gt_scene, pose, camera)
        mse = np.mean((pred.rgb - gt.rgb.astype(np.float64)) ** 2)
        vals.append(psnr_from_mse(mse))
    return float(np.mean(vals))


def extract_mesh(model, classes, config):
    """Marching-cubes surface of the (masked) occupancy field.

    The field is sampled on a mesh_resolution^3 node lattice spanning the
    model box; vertices come back in meters in the scene frame.  A field
    that never crosses the threshold yields an empty mesh.
    """
    res = config.mesh_resolution
    field = MaskedMap(model, classes) if classes is not None else model
    axes = [np.linspace(model.bbox_min[i], model.bbox_max[i], res) for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    occ = np.empty(res**3, dtype=np.float64)
    for lo in range(0, grid.shape[0], 262144):
        hi = min(lo + 262144, grid.shape[0])
        occ[lo:hi] = field.query_batch(grid[lo:hi], with_rgb=False)[0]
    vol = occ.reshape(res, res, res)
    if vol.min() >= config.iso_threshold or vol.max() <= config.iso_threshold:
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)
    spacing = tuple((model.bbox_max - model.bbox_min) / (res - 1))
    verts, faces, _, _ = measure.marching_cubes(
        vol, level=config.iso_threshold, spacing=spacing
    )
    return verts + model.bbox_min, faces.astype(np.int64)


def sample_mesh_points(verts, faces, n, rng):
    """n area-uniform points on a triangle mesh."""
    if faces.shape[0] == 0:
        return np.zeros((0, 3))
    tri = verts[faces]
    areas = 0.5 * np.linalg.norm(
        np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1
    )
    total = areas.sum()
    if total <= 0:
        return np.zeros((0, 3))
    pick = rng.choice(faces.shape[0], size=n, p=areas / total)
    u, v = rng.random((2, n))
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    t = tri[pick]
    return t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])


def match_fraction(points, ref_points, threshold):
    """Fraction of points lying within threshold of some reference point."""
    if points.shape[0] == 0:
        return 0.0
    if ref_points.shape[0] == 0:
        return 0.0
    d, _ = cKDTree(ref_points).query(points, k=1)
    return float(np.mean(d < threshold))


def point_set_scores(pred_points, gt_points, threshold):
    """Precision, completeness, and F1 between two surface point sets."""
    precision = match_fraction(pred_points, gt_points, threshold)
    completeness = match_fraction(gt_points, pred_points, threshold)
    s = precision + completeness
    f1 = 0.0 if s == 0 else 2.0 * precision * completeness / s
    return precision, completeness, f1


def f1_score(verts, faces, scene, classes, config, rng):
    """Surface agreement between a predicted mesh and the true primitives."""
    if faces.shape[0] == 0:
        return 0.0, 0.0, 0.0
    pred = sample_mesh_points(verts, faces, config.n_surface_points, rng)
    gt = sc.sample_gt_surface(scene, classes, config.n_surface_points, rng)
    return point_set_scores(pred, gt, config.dist_threshold)


def evaluate_model(model, scene, camera, config, n_samples, step, rng, with_psnr=True):
    """One MetricsRecord: masked PSNR (optional) plus masked-mesh F1."""
    classes = scene.interesting
    verts, faces = extract_mesh(model, classes, config)
    precision, completeness, f1 = f1_score(verts, faces, scene, classes, config, rng)
    psnr = (
        novel_view_psnr(model, scene, camera, config, n_samples, mask_classes=classes)
        if with_psnr
        else float("nan")
    )
    rec = MetricsRecord(step, psnr, precision, completeness, f1)
    rec.check()
    return rec


def save_mesh_obj(path, verts, faces):
    """Plain text mesh: one `v x y z` per vertex, one 1-based `f i j k` per
    triangle."""
    with open(path, "w") as fh:
        for v in verts:
            fh.write(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
        for f in faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def load_mesh_obj(path):
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(x) - 1 for x in parts[1:4]])
            else:
                raise ShapeError(f"unexpected mesh line: {line.strip()!r}")
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(
        faces, dtype=np.int64
    ).reshape(-1, 3)
