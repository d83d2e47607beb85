"""Next-best-view selection on the hemispherical action space.

The planner scores candidate views by casting rays through the current map
and summing per-ray occupancy entropy, weighted by transmittance so that
uncertainty hidden behind already-built surface does not count.  Two scores
come out of one render: an exploration score (all rays) and an exploitation
score (only rays whose rendered semantics argmax to an interesting class).
The selected view maximizes exploitation plus epsilon times exploration.

Candidates are drawn in two stages: a deterministic Fibonacci lattice over
the hemisphere, then Gaussian refinement around the top-scoring lattice
views.  Four baseline policies share the same action space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from . import rendering as rn
from . import scene as sc
from .errors import ConfigError, DomainError

PLANNER_KINDS = ("ours", "exploration", "fixed_pattern", "max_view_distance", "uniform")

# golden angle, radians; azimuth step of the fixed spiral pattern
_GOLDEN_ANGLE = 2.0 * np.pi * (1.0 - 1.0 / ((1.0 + np.sqrt(5.0)) / 2.0))
_SPIRAL_STEPS = 10


@dataclass(frozen=True)
class PlannerConfig:
    """Candidate-sampling and scoring parameters for view selection."""

    kind: str = "ours"
    n_uni: int = 100
    k_top: int = 10
    n_re: int = 10
    n_ray_side: int = 80
    n_pt: int = 200
    epsilon: float = 0.2
    interesting: frozenset = field(default_factory=frozenset)
    radius: float = 2.0
    elev_min: float = 0.1
    sigma: float = 0.15
    fov_deg: float = 70.0

    def __post_init__(self):
        if self.kind not in PLANNER_KINDS:
            raise ConfigError(f"unknown planner kind {self.kind!r}")
        if min(self.n_uni, self.k_top, self.n_re, self.n_ray_side, self.n_pt) < 1:
            raise ConfigError("candidate and ray counts must be positive")
        if self.k_top > self.n_uni:
            raise ConfigError("cannot refine more views than were sampled")
        if self.epsilon < 0:
            raise ConfigError("exploration weight must be >= 0")
        if self.kind == "ours" and not self.interesting:
            raise ConfigError("semantic-targeted planning needs a non-empty class set")

    @property
    def n_total(self):
        return self.n_uni + self.k_top * self.n_re


@dataclass
class CandidateView:
    """One scored view: hemisphere coordinates, pose, and utilities."""

    index: int
    azimuth: float
    elevation: float
    pose: sc.Pose
    u_er: float = 0.0
    u_et: float = 0.0
    u: float = 0.0


def point_entropy(o):
    """Binary entropy of occupancy, elementwise; 0*ln(0) taken as 0."""
    o = np.asarray(o, dtype=np.float64)
    if np.any(o < 0.0) or np.any(o > 1.0):
        raise DomainError("occupancy must lie in [0, 1]")
    return -xlogy(o, o) - xlogy(1.0 - o, 1.0 - o)


def _ray_entropies(occ):
    """Transmittance-weighted entropy for each row of an (R, N) occupancy
    matrix.  Samples behind built surface are discounted by T."""
    trans = np.cumprod(1.0 - occ[:, :-1], axis=1)
    trans = np.concatenate([np.ones((occ.shape[0], 1)), trans], axis=1)
    return np.sum(trans * point_entropy(occ), axis=1)


def ray_entropy(samples):
    """Accumulated entropy along one ray's samples."""
    samples.validate()
    return float(_ray_entropies(np.asarray(samples.o, dtype=np.float64)[None, :])[0])


def _score_poses(model, poses, config):
    """U_er and U_et for each pose, from one deterministic render apiece."""
    cam = sc.CameraModel.square(config.n_ray_side, fov_deg=config.fov_deg)
    interesting = np.array(sorted(config.interesting), dtype=np.int64)
    u_er = np.zeros(len(poses))
    u_et = np.zeros(len(poses))
    for i, pose in enumerate(poses):
        origin, dirs = sc.camera_rays(cam, pose)
        out = rn.render_rays(
            model, origin, dirs, config.n_pt, rng=None, keep_samples=True, with_rgb=False
        )
        if not np.any(out.hit):
            continue
        # missed rays keep all-zero occupancy rows, hence zero entropy
        h_ray = _ray_entropies(out.occ)
        # rendered class id; scaling by 1/alpha never moves the argmax
        class_id = np.argmax(out.sem, axis=1) + 1
        mask = np.isin(class_id, interesting) if interesting.size else np.zeros(h_ray.shape, bool)
        u_er[i] = float(np.sum(h_ray))
        u_et[i] = float(np.sum(h_ray * mask))
    return u_er, u_et


def _candidate(index, azimuth, elevation, config):
    azimuth = float(np.mod(azimuth, 2.0 * np.pi))
    elevation = float(np.clip(elevation, config.elev_min, np.pi / 2))
    pose = sc.hemisphere_view(azimuth, elevation, config.radius)
    return CandidateView(index, azimuth, elevation, pose)


def sample_candidates(model, visited, config, rng):
    """Two-stage candidate generation with scores filled in.

    Stage 1 scores a Fibonacci lattice of n_uni views; stage 2 perturbs each
    of the k_top best with n_re Gaussian draws in (azimuth, elevation).  The
    returned list holds n_uni + k_top*n_re scored candidates in draw order.
    """
    stage1 = [
        _candidate(i, az, el, config)
        for i, (az, el) in enumerate(sc.fibonacci_hemisphere(config.n_uni, config.elev_min))
    ]
    u_er, u_et = _score_poses(model, [c.pose for c in stage1], config)
    for c, er, et in zip(stage1, u_er, u_et):
        c.u_er, c.u_et, c.u = er, et, et + config.epsilon * er

    key = (lambda c: c.u_er) if config.kind == "exploration" else (lambda c: c.u)
    top = sorted(stage1, key=lambda c: (-key(c), c.index))[: config.k_top]

    stage2 = []
    for anchor in top:
        for _ in range(config.n_re):
            az, el = rng.normal([anchor.azimuth, anchor.elevation], config.sigma)
            stage2.append(_candidate(len(stage1) + len(stage2), az, el, config))
    u_er, u_et = _score_poses(model, [c.pose for c in stage2], config)
    for c, er, et in zip(stage2, u_er, u_et):
        c.u_er, c.u_et, c.u = er, et, et + config.epsilon * er
    return stage1 + stage2


def select_next_view(model, visited, config, rng):
    """Pick the utility-maximizing candidate view.

    Returns (selected, candidates).  Ties break toward the lower candidate
    index; candidates whose pose exactly matches a visited one are skipped so
    a stalled utility landscape cannot re-buy the same measurement.
    """
    candidates = sample_candidates(model, visited, config, rng)
    seen = {p.key() for p in visited}
    key = (lambda c: c.u_er) if config.kind == "exploration" else (lambda c: c.u)
    best = None
    for c in candidates:
        if c.pose.key() in seen:
            continue
        if best is None or key(c) > key(best):
            best = c
    if best is None:
        raise ConfigError("every candidate view was already visited")
    return best, candidates


def spiral_view(step, config):
    """Waypoint `step` of the deterministic pole-to-equator spiral."""
    frac = min(step + 1, _SPIRAL_STEPS) / _SPIRAL_STEPS
    elevation = np.pi / 2 + frac * (config.elev_min - np.pi / 2)
    azimuth = np.mod((step + 1) * _GOLDEN_ANGLE, 2.0 * np.pi)
    return _candidate(step, azimuth, elevation, config)


def _direction(pose, radius):
    return np.asarray(pose.position, dtype=np.float64) / radius


def max_view_distance_view(visited, config):
    """Lattice candidate maximizing the minimum great-circle distance to the
    visited views; ties break toward the lower index."""
    if not visited:
        raise ConfigError("max-view-distance planning needs at least one visited view")
    lattice = [
        _candidate(i, az, el, config)
        for i, (az, el) in enumerate(sc.fibonacci_hemisphere(config.n_uni, config.elev_min))
    ]
    seen = np.stack([_direction(p, config.radius) for p in visited])
    best, best_d = None, -1.0
    for c in lattice:
        dots = np.clip(seen @ _direction(c.pose, config.radius), -1.0, 1.0)
        d = float(np.min(np.arccos(dots)))
        if d > best_d + 1e-12:
            best, best_d = c, d
    return best


def uniform_view(config, rng):
    """One area-uniform random view on the elevation band."""
    azimuth = rng.uniform(0.0, 2.0 * np.pi)
    z = rng.uniform(np.sin(config.elev_min), 1.0)
    return _candidate(0, azimuth, float(np.arcsin(z)), config)


def next_view(model, visited, config, rng, step):
    """Dispatch on planner kind.

    Returns (selected, candidates); baselines that do not score utilities
    return themselves as the only logged candidate.
    """
    if config.kind in ("ours", "exploration"):
        return select_next_view(model, visited, config, rng)
    if config.kind == "fixed_pattern":
        c = spiral_view(step, config)
    elif config.kind == "max_view_distance":
        c = max_view_distance_view(visited, config)
    elif config.kind == "uniform":
        c = uniform_view(config, rng)
    else:
        raise ConfigError(f"unknown planner kind {config.kind!r}")
    return c, [c]
