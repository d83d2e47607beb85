"""Semantic implicit map: feature voxel grids + positional encoding + MLPs.

Three dense grids (occupancy, colour, semantics) are trilinearly interpolated
at query points.  Occupancy and colour features are concatenated with a
positional encoding and decoded by small MLPs with sigmoid heads; the
semantic field is the softmax of the raw grid features, with no encoding and
no MLP in between.

Grid features live in a ParamStore as (nodes, channels) matrices so gathers
and scatter-adds stay cheap; the conventional [T, H, W, L] layout is exposed
as a view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, OutOfBoundsError, ShapeError

PE_DIM = 21  # 3 + sin/cos at 3 frequencies
_N_FREQ = 3


def positional_encode(points, bbox_min, bbox_max, dtype=np.float64):
    """Map points to 21 features: box-normalized coords plus sin/cos bands.

    Coordinates are normalized to [-1, 1]; frequencies are 2^k * pi for
    k in {0, 1, 2}.  Every output entry lies in [-1, 1].
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeError(f"expected (n, 3) points, got {pts.shape}")
    xhat = (2.0 * (pts - bbox_min) / (bbox_max - bbox_min) - 1.0).astype(dtype)
    out = np.empty((pts.shape[0], PE_DIM), dtype=dtype)
    out[:, :3] = xhat
    for k in range(_N_FREQ):
        arg = (2.0**k * np.pi) * xhat
        np.sin(arg, out=out[:, 3 + 6 * k : 6 + 6 * k])
        np.cos(arg, out=out[:, 6 + 6 * k : 9 + 6 * k])
    return out


@dataclass
class FieldSample:
    """Field values at one point: occupancy, colour, class distribution."""

    o: float
    c: np.ndarray
    s: np.ndarray


class FeatureGrid:
    """One dense feature voxel grid over the scene box.

    Nodes sit on a regular lattice with spacing size/(resolution-1); a query
    point blends the 8 nodes of its enclosing cell.
    """

    def __init__(self, param, resolution, bbox_min, bbox_max):
        self.param = param
        self.resolution = int(resolution)
        self.bbox_min = np.asarray(bbox_min, dtype=np.float64)
        self.bbox_max = np.asarray(bbox_max, dtype=np.float64)
        self.spacing = (self.bbox_max - self.bbox_min) / (self.resolution - 1)

    @property
    def channels(self):
        return self.param.data.shape[1]

    @property
    def features(self):
        """Features in [T, H, W, L] layout (view, no copy)."""
        r = self.resolution
        return self.param.data.reshape(r, r, r, -1).transpose(3, 0, 1, 2)

    def inside(self, points):
        pts = np.asarray(points)
        return np.all((pts >= self.bbox_min - 1e-9) & (pts <= self.bbox_max + 1e-9), axis=1)

    def interp_weights(self, points):
        """Corner indices and trilinear weights for each point: (n,8), (n,8)."""
        pts = np.asarray(points, dtype=np.float64)
        r = self.resolution
        u = (pts - self.bbox_min) / self.spacing
        i0 = np.clip(np.floor(u).astype(np.int64), 0, r - 2)
        f = np.clip(u - i0, 0.0, 1.0)

        # flat node index: (ix * r + iy) * r + iz
        base = (i0[:, 0] * r + i0[:, 1]) * r + i0[:, 2]
        sx, sy, sz = r * r, r, 1
        offsets = np.array(
            [0, sz, sy, sy + sz, sx, sx + sz, sx + sy, sx + sy + sz], dtype=np.int64
        )
        idx8 = base[:, None] + offsets[None, :]

        fx, fy, fz = f[:, 0:1], f[:, 1:2], f[:, 2:3]
        gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
        w8 = np.concatenate(
            [
                gx * gy * gz, gx * gy * fz, gx * fy * gz, gx * fy * fz,
                fx * gy * gz, fx * gy * fz, fx * fy * gz, fx * fy * fz,
            ],
            axis=1,
        )
        return idx8, w8.astype(self.param.data.dtype)

    def interpolate(self, points):
        """Trilinear feature lookup; differentiable w.r.t. node features.

        Points must be inside the box; callers clamp or mask beforehand.
        """
        pts = np.asarray(points)
        if not np.all(self.inside(pts)):
            raise OutOfBoundsError("interpolation point outside the grid box")
        idx8, w8 = self.interp_weights(pts)
        return ad.trilinear_gather(self.param, idx8, w8)


class MapModel:
    """The full implicit map: three grids, two MLPs, softmax semantics."""

    def __init__(
        self,
        resolution=128,
        bbox_min=None,
        bbox_max=None,
        t_occ=3,
        t_rgb=6,
        t_sem=7,
        n_classes=7,
        hidden_occ=32,
        hidden_rgb=128,
        seed=0,
        dtype=np.float32,
        grid_lr_mult=100.0,
    ):
        from .scene import DEFAULT_BBOX_MAX, DEFAULT_BBOX_MIN

        if resolution < 2:
            raise ConfigError("grid resolution must be at least 2")
        if t_sem != n_classes:
            raise ConfigError("semantic grid channels must equal the class count")
        self.resolution = resolution
        self.bbox_min = np.asarray(
            DEFAULT_BBOX_MIN if bbox_min is None else bbox_min, dtype=np.float64
        )
        self.bbox_max = np.asarray(
            DEFAULT_BBOX_MAX if bbox_max is None else bbox_max, dtype=np.float64
        )
        self.n_classes = n_classes
        self.seed = seed
        self.grid_lr_mult = float(grid_lr_mult)
        self.hidden_occ = hidden_occ
        self.hidden_rgb = hidden_rgb
        self.store = ad.ParamStore(dtype=dtype)

        n_nodes = resolution**3
        rng = np.random.default_rng(seed)

        def grid(name, channels):
            p = self.store.register(
                f"grid.{name}", np.zeros((n_nodes, channels)), lr_mult=self.grid_lr_mult
            )
            return FeatureGrid(p, resolution, self.bbox_min, self.bbox_max)

        self.grid_occ = grid("occ", t_occ)
        self.grid_rgb = grid("rgb", t_rgb)
        self.grid_sem = grid("sem", t_sem)

        def mlp(name, width_in, hidden, width_out):
            # hidden layers Kaiming-seeded, final layer zero so a fresh model
            # decodes to logits 0 (occupancy 0.5) everywhere
            sizes = [width_in, hidden, hidden, width_out]
            layers = []
            for i in range(3):
                fan_in, fan_out = sizes[i], sizes[i + 1]
                if i == 2:
                    w = np.zeros((fan_in, fan_out))
                else:
                    w = rng.normal(size=(fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
                layers.append(
                    (
                        self.store.register(f"mlp.{name}.w{i}", w),
                        self.store.register(f"mlp.{name}.b{i}", np.zeros(fan_out)),
                    )
                )
            return layers

        self.mlp_occ = mlp("occ", PE_DIM + t_occ, hidden_occ, 1)
        self.mlp_rgb = mlp("rgb", PE_DIM + t_rgb, hidden_rgb, 3)

    @property
    def dtype(self):
        return self.store.dtype

    def inside(self, points):
        return self.grid_occ.inside(points)

    def _decode(self, name, layers, features, pe):
        x = ad.concat([pe, features], axis=1)
        h = ad.linear(x, layers[0][0], layers[0][1], activation="relu", name=f"{name}.0")
        h = ad.linear(h, layers[1][0], layers[1][1], activation="relu", name=f"{name}.1")
        return ad.linear(h, layers[2][0], layers[2][1], activation="sigmoid", name=f"{name}.2")

    def query_batch_tracked(self, points, with_rgb=True, with_sem=True):
        """Differentiable field query; every point must be inside the box.

        Returns (o, c, s) as tracked values with shapes (n,1), (n,3), (n,P).
        Heads switched off come back as None; skipping the colour MLP roughly
        halves the cost of planning and mesh queries.
        """
        pts = np.asarray(points, dtype=np.float64)
        if not np.all(self.inside(pts)):
            raise OutOfBoundsError("tracked query requires in-box points")
        pe = positional_encode(pts, self.bbox_min, self.bbox_max, dtype=self.dtype)
        # the three grids share one lattice, so corner indices/weights too
        idx8, w8 = self.grid_occ.interp_weights(pts)
        occ = self._decode(
            "occ", self.mlp_occ, ad.trilinear_gather(self.grid_occ.param, idx8, w8), pe
        )
        rgb = None
        if with_rgb:
            rgb = self._decode(
                "rgb", self.mlp_rgb, ad.trilinear_gather(self.grid_rgb.param, idx8, w8), pe
            )
        sem = None
        if with_sem:
            sem = ad.softmax(ad.trilinear_gather(self.grid_sem.param, idx8, w8))
        return occ, rgb, sem

    def query_batch(self, points, with_rgb=True, with_sem=True):
        """Field values as plain arrays; out-of-box points get the convention
        (o=0, c=0, s=uniform).  Heads switched off come back as None."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ShapeError(f"expected (n, 3) points, got {pts.shape}")
        n = pts.shape[0]
        o = np.zeros(n, dtype=self.dtype)
        c = np.zeros((n, 3), dtype=self.dtype) if with_rgb else None
        s = (
            np.full((n, self.n_classes), 1.0 / self.n_classes, dtype=self.dtype)
            if with_sem
            else None
        )
        inside = self.inside(pts)
        if np.any(inside):
            ov, cv, sv = self.query_batch_tracked(pts[inside], with_rgb, with_sem)
            o[inside] = ov.data[:, 0]
            if with_rgb:
                c[inside] = cv.data
            if with_sem:
                s[inside] = sv.data
        return o, c, s

    def query(self, point):
        o, c, s = self.query_batch(np.asarray(point, dtype=np.float64)[None, :])
        return FieldSample(o=float(o[0]), c=c[0], s=s[0])

    # -- persistence ---------------------------------------------------------

    def _meta_arrays(self):
        return {
            "meta.bbox": np.concatenate([self.bbox_min, self.bbox_max]),
            "meta.shape": np.array(
                [
                    self.resolution,
                    self.grid_occ.channels,
                    self.grid_rgb.channels,
                    self.grid_sem.channels,
                    self.n_classes,
                    self.hidden_occ,
                    self.hidden_rgb,
                    self.seed,
                ],
                dtype=np.int64,
            ),
            "meta.grid_lr_mult": np.array([self.grid_lr_mult]),
        }

    def save(self, path):
        arrays = self.store.state_arrays()
        arrays.update(self._meta_arrays())
        ad.save_checkpoint(path, arrays)

    @classmethod
    def load(cls, path, dtype=np.float32):
        arrays = ad.load_checkpoint(path)
        if "meta.shape" not in arrays:
            raise ConfigError("checkpoint lacks model metadata")
        res, t_occ, t_rgb, t_sem, n_cls, h_occ, h_rgb, seed = arrays["meta.shape"]
        bbox = arrays["meta.bbox"]
        model = cls(
            resolution=int(res),
            bbox_min=bbox[:3],
            bbox_max=bbox[3:],
            t_occ=int(t_occ),
            t_rgb=int(t_rgb),
            t_sem=int(t_sem),
            n_classes=int(n_cls),
            hidden_occ=int(h_occ),
            hidden_rgb=int(h_rgb),
            seed=int(seed),
            dtype=dtype,
            grid_lr_mult=float(arrays["meta.grid_lr_mult"][0]),
        )
        model.store.load_state_arrays(arrays)
        return model
