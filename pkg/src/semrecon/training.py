"""Online map training: replay buffer over ray examples, three-term loss.

Each measurement contributes one ray example per pixel.  Batches mix the
latest measurement with the union of earlier ones, drawing each example with
probability inversely proportional to how often it has been drawn before.

Loss terms per ray: Euclidean colour error, L1 depth error on valid pixels,
and cross-entropy between the (renormalized) rendered class distribution and
the measured label.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DuplicateMeasurementError, EmptySelectionError, TrainingDiverged
from .rendering import render_rays_tracked
from .scene import camera_rays

_PROB_FLOOR = 1e-6


@dataclass
class TrainConfig:
    lambda_rgb: float = 1.0
    lambda_depth: float = 0.1
    lambda_sem: float = 1.0
    batch_size: int = 8000
    batch_current: int = 4000  # rest comes from previous measurements
    iters: int = 200
    n_samples: int = 128  # points per ray
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if min(self.lambda_rgb, self.lambda_depth, self.lambda_sem) < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 0 < self.batch_current <= self.batch_size:
            raise ConfigError("batch split must satisfy 0 < current <= batch size")
        if self.iters < 1 or self.n_samples < 2:
            raise ConfigError("iters must be >= 1 and n_samples >= 2")

    @property
    def batch_previous(self):
        return self.batch_size - self.batch_current


@dataclass
class LossReport:
    l_rgb: float
    l_depth: float
    l_sem: float
    total: float

    def check_identity(self, config, tol=1e-6):
        expect = (
            config.lambda_rgb * self.l_rgb
            + config.lambda_depth * self.l_depth
            + config.lambda_sem * self.l_sem
        )
        return abs(self.total - expect) <= tol * max(1.0, abs(expect))


@dataclass
class _MeasurementTable:
    origin: np.ndarray  # (3,) camera centre
    dirs: np.ndarray  # (n, 3)
    rgb: np.ndarray  # (n, 3)
    depth: np.ndarray  # (n,)
    labels: np.ndarray  # (n,)
    valid: np.ndarray  # (n,) depth validity
    counts: np.ndarray  # (n,) times drawn


@dataclass
class RayBatch:
    origins: np.ndarray
    dirs: np.ndarray
    rgb: np.ndarray
    depth: np.ndarray
    labels: np.ndarray
    valid: np.ndarray
    refs: np.ndarray  # (n, 2): (measurement index, pixel index)


class ReplayBuffer:
    """Per-measurement ray example tables with draw counting."""

    def __init__(self, camera):
        self.camera = camera
        self.tables: list[_MeasurementTable] = []
        self._pose_keys = set()

    @property
    def n_measurements(self):
        return len(self.tables)

    def n_examples(self):
        return sum(t.dirs.shape[0] for t in self.tables)

    def add_measurement(self, measurement):
        if measurement.rgb.shape[:2] != (self.camera.height, self.camera.width):
            raise ConfigError(
                f"measurement resolution {measurement.rgb.shape[:2]} does not match "
                f"camera {(self.camera.height, self.camera.width)}"
            )
        key = measurement.pose.key()
        if key in self._pose_keys:
            raise DuplicateMeasurementError(
                f"measurement at pose {np.round(measurement.pose.position, 4)} already in buffer"
            )
        self._pose_keys.add(key)
        origin, dirs = camera_rays(self.camera, measurement.pose)
        n = dirs.shape[0]
        self.tables.append(
            _MeasurementTable(
                origin=origin,
                dirs=dirs,
                rgb=measurement.rgb.reshape(n, 3).astype(np.float64),
                depth=measurement.depth.reshape(n).astype(np.float64),
                labels=measurement.labels.reshape(n).astype(np.int64),
                valid=measurement.depth.reshape(n) > 0,
                counts=np.zeros(n, dtype=np.int64),
            )
        )

    def _draw(self, table_indices, k, rng):
        counts = np.concatenate([self.tables[i].counts for i in table_indices])
        weights = 1.0 / (1.0 + counts)
        probs = weights / weights.sum()
        flat = rng.choice(counts.size, size=k, replace=True, p=probs)

        # map flat indices back to (table, pixel) and bump counts once per draw
        sizes = [self.tables[i].counts.size for i in table_indices]
        bounds = np.cumsum([0] + sizes)
        refs = np.empty((k, 2), dtype=np.int64)
        for j, ti in enumerate(table_indices):
            sel = (flat >= bounds[j]) & (flat < bounds[j + 1])
            local = flat[sel] - bounds[j]
            np.add.at(self.tables[ti].counts, local, 1)
            refs[sel, 0] = ti
            refs[sel, 1] = local
        return refs

    def sample_batch(self, config, rng):
        """Weighted draw: `batch_current` rays from the newest measurement plus
        `batch_previous` from the union of all earlier ones."""
        if not self.tables:
            raise EmptySelectionError("replay buffer holds no measurements")
        latest = self.n_measurements - 1
        if latest == 0:
            refs = self._draw([0], config.batch_size, rng)
        else:
            refs_prev = self._draw(list(range(latest)), config.batch_previous, rng)
            refs_cur = self._draw([latest], config.batch_current, rng)
            refs = np.concatenate([refs_prev, refs_cur], axis=0)

        t_idx, p_idx = refs[:, 0], refs[:, 1]
        origins = np.stack([self.tables[t].origin for t in t_idx])
        # per-field fancy gather, grouped by table for speed
        n = refs.shape[0]
        dirs = np.empty((n, 3))
        rgb = np.empty((n, 3))
        depth = np.empty(n)
        labels = np.empty(n, dtype=np.int64)
        valid = np.empty(n, dtype=bool)
        for ti in np.unique(t_idx):
            sel = t_idx == ti
            rows = p_idx[sel]
            tab = self.tables[ti]
            dirs[sel] = tab.dirs[rows]
            rgb[sel] = tab.rgb[rows]
            depth[sel] = tab.depth[rows]
            labels[sel] = tab.labels[rows]
            valid[sel] = tab.valid[rows]
        return RayBatch(origins, dirs, rgb, depth, labels, valid, refs)


def batch_loss(model, batch, config, rng=None):
    """Forward losses on one ray batch. Returns (LossReport, total Var).

    Rays that miss the scene box carry no field samples and are dropped from
    every term.
    """
    hit, tv = render_rays_tracked(model, batch.origins, batch.dirs, config.n_samples, rng)
    if tv is None:
        raise EmptySelectionError("no ray in the batch intersects the scene box")

    rgb_t = batch.rgb[hit]
    depth_t = batch.depth[hit]
    labels_t = batch.labels[hit] - 1  # class ids are 1-based
    valid_t = batch.valid[hit]

    # colour: per-ray Euclidean norm of the RGB error
    diff = ad.sub(tv["rgb"], rgb_t)
    per_ray = ad.sqrt_shift(ad.sum_axis(ad.mul(diff, diff), 1), 1e-12)
    l_rgb = ad.mean_all(per_ray)

    # depth: L1 over rays with valid measured depth
    n_valid = int(valid_t.sum())
    if n_valid:
        err = ad.abs_(ad.sub(tv["depth"], depth_t))
        l_depth = ad.mul(ad.sum_all(ad.mul(err, valid_t.astype(np.float64))), 1.0 / n_valid)
    else:
        l_depth = ad.mul(ad.sum_all(tv["depth"]), 0.0)

    # semantics: cross-entropy on the rendered distribution, renormalized by
    # the accumulated opacity so unconverged geometry still gives a gradient
    a_safe = ad.maximum_const(tv["alpha"], _PROB_FLOOR)
    n_rays = tv["sem"].data.shape[0]
    s_norm = ad.div(tv["sem"], ad.reshape(a_safe, (n_rays, 1)))
    picked = ad.take_rows(s_norm, labels_t)
    l_sem = ad.mul(ad.mean_all(ad.log_clip(picked, _PROB_FLOOR)), -1.0)

    total = ad.add(
        ad.add(ad.mul(l_rgb, config.lambda_rgb), ad.mul(l_depth, config.lambda_depth)),
        ad.mul(l_sem, config.lambda_sem),
    )
    report = LossReport(
        l_rgb=float(l_rgb.data),
        l_depth=float(l_depth.data),
        l_sem=float(l_sem.data),
        total=float(total.data),
    )
    return report, total


def train_round(model, buffer, config, rng):
    """One planning-round's worth of optimizer steps. Returns the loss series."""
    reports = []
    for it in range(config.iters):
        batch = buffer.sample_batch(config, rng)
        with ad.Tape() as tape:
            report, total = batch_loss(model, batch, config, rng)
            for term, value in (
                ("rgb", report.l_rgb),
                ("depth", report.l_depth),
                ("sem", report.l_sem),
            ):
                if not np.isfinite(value):
                    tape.reset()
                    raise TrainingDiverged(
                        iteration=it,
                        term=term,
                        example_ids=[tuple(r) for r in batch.refs[:8]],
                    )
            model.store.zero_grad()
            tape.backward(total)
        model.store.adam_step(config.lr, config.beta1, config.beta2, config.eps)
        reports.append(report)
    return reports
