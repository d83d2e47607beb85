"""Analytic ray-traced simulator: posed RGB-D + semantic measurements.

The world is a 3 m cube centred at the origin.  Scenes are unions of analytic
primitives (spheres, axis-aligned boxes, z-aligned cylinders); cameras sit on
a hemisphere above the z=0 plane and always look at the origin.  Colour is
albedo under fixed-direction Lambertian shading (view independent), depth is
Euclidean distance along the ray, sky pixels get the background label and a
negative depth sentinel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, EmptySelectionError, ShapeError

DEFAULT_BBOX_MIN = np.array([-1.5, -1.5, -1.5])
DEFAULT_BBOX_MAX = np.array([1.5, 1.5, 1.5])
N_CLASSES = 7
BACKGROUND_CLASS = 7
HEMISPHERE_RADIUS = 2.0
INVALID_DEPTH = -1.0

_LIGHT_DIR = np.array([0.5, 0.3, 1.0]) / np.linalg.norm([0.5, 0.3, 1.0])
_AMBIENT = 0.2
_SHAPES = ("sphere", "box", "cylinder")
_GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise DomainError("cannot normalize a zero vector")
    return v / n


# ---------------------------------------------------------------------------
# domain types


@dataclass
class ScenePrimitive:
    """One analytic solid.

    size semantics: sphere -> (radius,); box -> half extents (hx, hy, hz);
    cylinder -> (radius, half_height), axis along +z.
    """

    shape: str
    center: np.ndarray
    size: np.ndarray
    albedo: np.ndarray
    class_id: int

    def __post_init__(self):
        if self.shape not in _SHAPES:
            raise ConfigError(f"unknown primitive shape '{self.shape}'")
        self.center = np.asarray(self.center, dtype=np.float64)
        self.size = np.atleast_1d(np.asarray(self.size, dtype=np.float64))
        self.albedo = np.asarray(self.albedo, dtype=np.float64)
        expected = {"sphere": 1, "box": 3, "cylinder": 2}[self.shape]
        if self.size.shape != (expected,):
            raise ShapeError(
                f"{self.shape} expects {expected} size value(s), got {self.size.shape}"
            )
        if np.any(self.size <= 0):
            raise ConfigError(f"{self.shape} size must be positive")
        if self.albedo.shape != (3,) or np.any(self.albedo < 0) or np.any(self.albedo > 1):
            raise ConfigError("albedo must be 3 values in [0, 1]")
        self.class_id = int(self.class_id)

    def aabb(self):
        if self.shape == "sphere":
            half = np.full(3, self.size[0])
        elif self.shape == "box":
            half = self.size
        else:
            half = np.array([self.size[0], self.size[0], self.size[1]])
        return self.center - half, self.center + half

    def surface_area(self):
        if self.shape == "sphere":
            return 4.0 * math.pi * self.size[0] ** 2
        if self.shape == "box":
            a, b, c = self.size
            return 8.0 * (a * b + b * c + a * c)
        r, h = self.size
        return 4.0 * math.pi * r * h + 2.0 * math.pi * r * r


@dataclass
class SceneSpec:
    primitives: list
    interesting: frozenset
    bbox_min: np.ndarray = field(default_factory=lambda: DEFAULT_BBOX_MIN.copy())
    bbox_max: np.ndarray = field(default_factory=lambda: DEFAULT_BBOX_MAX.copy())
    n_classes: int = N_CLASSES
    background_class: int = BACKGROUND_CLASS
    seed: int | None = None

    def __post_init__(self):
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64)
        self.interesting = frozenset(int(c) for c in self.interesting)
        self.validate()

    def validate(self):
        if np.any(self.bbox_max <= self.bbox_min):
            raise ConfigError("bounding box dimensions must be positive")
        valid_ids = set(range(1, self.n_classes + 1))
        if not self.interesting <= valid_ids:
            raise ConfigError(
                f"interesting classes {sorted(self.interesting)} outside 1..{self.n_classes}"
            )
        if self.background_class in self.interesting:
            raise ConfigError("background class cannot be interesting")
        if self.background_class not in valid_ids:
            raise ConfigError("background class outside 1..n_classes")
        for i, prim in enumerate(self.primitives):
            if not 1 <= prim.class_id <= self.n_classes:
                raise ConfigError(f"primitive {i}: class {prim.class_id} outside 1..{self.n_classes}")
            lo, hi = prim.aabb()
            if np.any(lo < self.bbox_min - 1e-9) or np.any(hi > self.bbox_max + 1e-9):
                raise ConfigError(f"primitive {i} ({prim.shape}) does not fit in the scene box")


@dataclass
class CameraModel:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    max_range: float = 8.0

    def __post_init__(self):
        if self.width != self.height or self.width <= 0:
            raise ConfigError("camera images must be square with positive resolution")
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("focal lengths must be positive")

    @classmethod
    def square(cls, resolution, fov_deg=70.0, max_range=8.0):
        f = (resolution / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
        return cls(resolution, resolution, f, f, resolution / 2.0, resolution / 2.0, max_range)


@dataclass
class Pose:
    """Camera pose: world position plus world-from-camera rotation.

    Camera axes follow the usual image convention: x right, y down,
    z forward along the optical axis.
    """

    position: np.ndarray
    rotation: np.ndarray
    azimuth: float | None = None
    elevation: float | None = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        if self.rotation.shape != (3, 3):
            raise ShapeError("pose rotation must be 3x3")

    def key(self):
        """Quantized identity used for duplicate-measurement detection."""
        return tuple(np.round(self.position, 6)) + tuple(np.round(self.rotation.ravel(), 6))


@dataclass
class Measurement:
    pose: Pose
    rgb: np.ndarray
    depth: np.ndarray
    labels: np.ndarray


# ---------------------------------------------------------------------------
# view geometry


def make_lookat(position, target):
    position = np.asarray(position, dtype=np.float64)
    forward = _unit(np.asarray(target, dtype=np.float64) - position)
    up_hint = np.array([0.0, 0.0, 1.0])
    if abs(forward @ up_hint) > 1.0 - 1e-9:
        up_hint = np.array([1.0, 0.0, 0.0])  # fixed fallback at the pole
    right = _unit(np.cross(forward, up_hint))
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward], axis=1)
    return Pose(position, rot)


def hemisphere_view(azimuth, elevation, radius=HEMISPHERE_RADIUS):
    """Pose on the view hemisphere, optical axis through the scene origin."""
    if not 0.0 <= elevation <= math.pi / 2 + 1e-12:
        raise DomainError(f"elevation {elevation} outside [0, pi/2]")
    if radius <= 0:
        raise DomainError("hemisphere radius must be positive")
    ce = math.cos(elevation)
    position = radius * np.array([ce * math.cos(azimuth), ce * math.sin(azimuth), math.sin(elevation)])
    pose = make_lookat(position, np.zeros(3))
    pose.azimuth = float(azimuth)
    pose.elevation = float(elevation)
    return pose


def fibonacci_hemisphere(n, elev_min=0.1, elev_max=math.pi / 2):
    """n roughly area-uniform (azimuth, elevation) pairs on the hemisphere band."""
    if n < 1:
        raise DomainError("need at least one view")
    i = np.arange(n)
    z_lo, z_hi = math.sin(elev_min), math.sin(elev_max)
    z = z_lo + (i + 0.5) / n * (z_hi - z_lo)
    azimuth = (2.0 * math.pi * i / _GOLDEN) % (2.0 * math.pi)
    elevation = np.arcsin(np.clip(z, -1.0, 1.0))
    return np.stack([azimuth, elevation], axis=1)


def camera_rays(camera, pose):
    """World-space rays for every pixel, row-major. Returns (origin, dirs[N,3])."""
    u = (np.arange(camera.width) + 0.5 - camera.cx) / camera.fx
    v = (np.arange(camera.height) + 0.5 - camera.cy) / camera.fy
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack([uu, vv, np.ones_like(uu)], axis=-1).reshape(-1, 3)
    d_cam /= np.linalg.norm(d_cam, axis=1, keepdims=True)
    dirs = d_cam @ pose.rotation.T
    return pose.position, dirs


# ---------------------------------------------------------------------------
# ray-primitive intersection

_EPS = 1e-9


def _intersect_sphere(origin, dirs, prim):
    oc = origin - prim.center
    r = prim.size[0]
    b = dirs @ oc
    c = oc @ oc - r * r
    disc = b * b - c
    hit = disc >= 0
    sq = np.sqrt(np.maximum(disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 > _EPS, t0, np.where(t1 > _EPS, t1, np.inf))
    return np.where(hit, t, np.inf)


def _intersect_box(origin, dirs, prim):
    lo, hi = prim.aabb()
    d = np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
    t1 = (lo - origin) / d
    t2 = (hi - origin) / d
    tn = np.minimum(t1, t2).max(axis=1)
    tf = np.maximum(t1, t2).min(axis=1)
    t = np.where(tn > _EPS, tn, tf)
    hit = (tf >= tn) & (tf > _EPS)
    return np.where(hit, t, np.inf)


def _intersect_cylinder(origin, dirs, prim):
    r, h = prim.size
    c = prim.center
    ox, oy, oz = origin - c
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]

    t_best = np.full(dirs.shape[0], np.inf)

    # curved side
    a = dx * dx + dy * dy
    b = ox * dx + oy * dy
    cc = ox * ox + oy * oy - r * r
    safe_a = np.where(a < 1e-14, 1.0, a)
    disc = b * b - a * cc
    sq = np.sqrt(np.maximum(disc, 0.0))
    for sign in (-1.0, 1.0):
        t = (-b + sign * sq) / safe_a
        z_at = oz + t * dz
        ok = (a >= 1e-14) & (disc >= 0) & (t > _EPS) & (np.abs(z_at) <= h)
        t_best = np.where(ok & (t < t_best), t, t_best)

    # caps
    dz_safe = np.where(np.abs(dz) < 1e-12, 1e-12, dz)
    for zc in (-h, h):
        t = (zc - oz) / dz_safe
        x_at = ox + t * dx
        y_at = oy + t * dy
        ok = (t > _EPS) & (x_at * x_at + y_at * y_at <= r * r)
        t_best = np.where(ok & (t < t_best), t, t_best)

    return t_best


_INTERSECTORS = {"sphere": _intersect_sphere, "box": _intersect_box, "cylinder": _intersect_cylinder}


def _surface_normal(prim, pts):
    if prim.shape == "sphere":
        n = pts - prim.center
        return n / np.linalg.norm(n, axis=1, keepdims=True)
    if prim.shape == "box":
        q = (pts - prim.center) / prim.size
        ax = np.argmax(np.abs(q), axis=1)
        n = np.zeros_like(pts)
        rows = np.arange(pts.shape[0])
        n[rows, ax] = np.sign(q[rows, ax])
        return n
    r, h = prim.size
    rel = pts - prim.center
    n = np.zeros_like(pts)
    on_cap = np.abs(np.abs(rel[:, 2]) - h) < 1e-6
    n[on_cap, 2] = np.sign(rel[on_cap, 2])
    side = ~on_cap
    radial = rel[side, :2]
    norms = np.linalg.norm(radial, axis=1, keepdims=True)
    n[side, :2] = radial / np.maximum(norms, 1e-12)
    return n


# ---------------------------------------------------------------------------
# rendering


def render_measurement(scene, pose, camera):
    """Closest-hit trace of every pixel; sky rays get the background label."""
    if pose.position[2] < -1e-9:
        raise DomainError("camera must be on or above the ground plane")
    origin, dirs = camera_rays(camera, pose)
    n = dirs.shape[0]

    t_best = np.full(n, np.inf)
    hit_prim = np.full(n, -1, dtype=np.int32)
    for k, prim in enumerate(scene.primitives):
        t = _INTERSECTORS[prim.shape](origin, dirs, prim)
        closer = t < t_best
        t_best = np.where(closer, t, t_best)
        hit_prim[closer] = k

    valid = np.isfinite(t_best) & (t_best <= camera.max_range)
    rgb = np.zeros((n, 3), dtype=np.float32)
    depth = np.full(n, INVALID_DEPTH, dtype=np.float32)
    labels = np.full(n, scene.background_class, dtype=np.int16)

    for k, prim in enumerate(scene.primitives):
        sel = valid & (hit_prim == k)
        if not np.any(sel):
            continue
        pts = origin + t_best[sel, None] * dirs[sel]
        normals = _surface_normal(prim, pts)
        shade = _AMBIENT + (1.0 - _AMBIENT) * np.maximum(normals @ _LIGHT_DIR, 0.0)
        rgb[sel] = (prim.albedo[None, :] * shade[:, None]).astype(np.float32)
        depth[sel] = t_best[sel].astype(np.float32)
        labels[sel] = prim.class_id

    h, w = camera.height, camera.width
    return Measurement(
        pose=pose,
        rgb=rgb.reshape(h, w, 3),
        depth=depth.reshape(h, w),
        labels=labels.reshape(h, w),
    )


# ---------------------------------------------------------------------------
# ground-truth surface sampling


def _sample_on_primitive(prim, k, rng):
    if prim.shape == "sphere":
        v = rng.normal(size=(k, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return prim.center + prim.size[0] * v
    if prim.shape == "box":
        hx, hy, hz = prim.size
        face_areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy]) * 4.0
        faces = rng.choice(6, size=k, p=face_areas / face_areas.sum())
        u = rng.uniform(-1.0, 1.0, size=(k, 2))
        pts = np.empty((k, 3))
        half = prim.size
        for f in range(6):
            sel = faces == f
            axis = f // 2
            sign = 1.0 if f % 2 == 0 else -1.0
            other = [a for a in range(3) if a != axis]
            pts[sel, axis] = sign * half[axis]
            pts[sel, other[0]] = u[sel, 0] * half[other[0]]
            pts[sel, other[1]] = u[sel, 1] * half[other[1]]
        return prim.center + pts
    r, h = prim.size
    side_area = 4.0 * math.pi * r * h
    cap_area = math.pi * r * r
    total = side_area + 2.0 * cap_area
    which = rng.choice(3, size=k, p=[side_area / total, cap_area / total, cap_area / total])
    phi = rng.uniform(0.0, 2.0 * math.pi, size=k)
    pts = np.empty((k, 3))
    side = which == 0
    pts[side, 0] = r * np.cos(phi[side])
    pts[side, 1] = r * np.sin(phi[side])
    pts[side, 2] = rng.uniform(-h, h, size=side.sum())
    for w, zc in ((1, h), (2, -h)):
        sel = which == w
        rr = r * np.sqrt(rng.uniform(size=sel.sum()))
        pts[sel, 0] = rr * np.cos(phi[sel])
        pts[sel, 1] = rr * np.sin(phi[sel])
        pts[sel, 2] = zc
    return prim.center + pts


def sample_gt_surface(scene, classes, n, rng):
    """n area-uniform surface points over primitives whose class is in `classes`."""
    if n < 1:
        raise DomainError("need n >= 1 surface samples")
    classes = set(int(c) for c in classes)
    prims = [p for p in scene.primitives if p.class_id in classes]
    if not prims:
        raise EmptySelectionError(f"no primitive has class in {sorted(classes)}")
    areas = np.array([p.surface_area() for p in prims])
    counts = rng.multinomial(n, areas / areas.sum())
    parts = [
        _sample_on_primitive(p, int(k), rng) for p, k in zip(prims, counts) if k > 0
    ]
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# scene construction


def _aabb_overlap_frac(prim_a, prim_b):
    lo_a, hi_a = prim_a.aabb()
    lo_b, hi_b = prim_b.aabb()
    inter = np.maximum(0.0, np.minimum(hi_a, hi_b) - np.maximum(lo_a, lo_b))
    vol_inter = float(np.prod(inter))
    vol_a = float(np.prod(hi_a - lo_a))
    vol_b = float(np.prod(hi_b - lo_b))
    return vol_inter / max(min(vol_a, vol_b), 1e-12)


def generate_scene(seed, n_objects=4, interesting=frozenset({2, 5})):
    """Random non-overlapping primitives around the origin, seeded."""
    rng = np.random.default_rng(seed)
    interesting = frozenset(interesting)
    fg_classes = [c for c in range(1, N_CLASSES) if c != BACKGROUND_CLASS]
    prims = []
    tries = 0
    while len(prims) < n_objects:
        tries += 1
        if tries > 200 * n_objects:
            raise ConfigError("could not place primitives without overlap")
        shape = _SHAPES[rng.integers(0, 3)]
        if shape == "sphere":
            size = np.array([rng.uniform(0.25, 0.45)])
        elif shape == "box":
            size = rng.uniform(0.18, 0.4, size=3)
        else:
            size = np.array([rng.uniform(0.18, 0.35), rng.uniform(0.25, 0.45)])
        center = np.array(
            [rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9), rng.uniform(-0.5, 0.5)]
        )
        if len(prims) == 0 and interesting:
            cls = sorted(interesting)[int(rng.integers(0, len(interesting)))]
        else:
            cls = fg_classes[int(rng.integers(0, len(fg_classes)))]
        albedo = rng.uniform(0.25, 0.95, size=3)
        cand = ScenePrimitive(shape, center, size, albedo, cls)
        lo, hi = cand.aabb()
        if np.any(lo < DEFAULT_BBOX_MIN) or np.any(hi > DEFAULT_BBOX_MAX):
            continue
        if any(_aabb_overlap_frac(cand, p) > 0.2 for p in prims):
            continue
        prims.append(cand)
    return SceneSpec(primitives=prims, interesting=interesting, seed=seed)


def single_sphere_scene():
    """One interesting sphere at the origin; the minimal reconstruction target."""
    sphere = ScenePrimitive("sphere", [0.0, 0.0, 0.0], [0.5], [0.85, 0.3, 0.2], 2)
    return SceneSpec(primitives=[sphere], interesting=frozenset({2}))


def occlusion_scene():
    """Two interesting objects; one hidden inside an open-sided hut of boring boxes.

    The hut opens away from the scene centre, so the hidden sphere is only
    visible from low-elevation views on that side.  Nothing semantically
    interesting is measurable there until a camera actually enters the
    opening's sight line.
    """
    prims = [
        # visible interesting object
        ScenePrimitive("sphere", [0.8, 0.0, 0.0], [0.4], [0.85, 0.25, 0.2], 2),
        # hidden interesting object
        ScenePrimitive("sphere", [-0.8, 0.0, 0.0], [0.3], [0.2, 0.4, 0.85], 5),
        # hut: roof, two side walls, front wall; open toward -x
        ScenePrimitive("box", [-0.85, 0.0, 0.58], [0.45, 0.48, 0.08], [0.5, 0.5, 0.5], 6),
        ScenePrimitive("box", [-0.85, 0.42, -0.08], [0.45, 0.06, 0.58], [0.55, 0.55, 0.5], 6),
        ScenePrimitive("box", [-0.85, -0.42, -0.08], [0.45, 0.06, 0.58], [0.55, 0.55, 0.5], 6),
        ScenePrimitive("box", [-0.42, 0.0, -0.08], [0.03, 0.48, 0.58], [0.5, 0.55, 0.55], 6),
    ]
    return SceneSpec(primitives=prims, interesting=frozenset({2, 5}))


# ---------------------------------------------------------------------------
# scene file I/O


def save_scene(path, scene):
    lines = ["# scene description"]
    b = np.concatenate([scene.bbox_min, scene.bbox_max])
    lines.append("bbox " + " ".join(f"{v:g}" for v in b))
    lines.append(f"classes {scene.n_classes}")
    lines.append(f"background {scene.background_class}")
    lines.append("interesting " + " ".join(str(c) for c in sorted(scene.interesting)))
    if scene.seed is not None:
        lines.append(f"seed {scene.seed}")
    for prim in scene.primitives:
        lines.append("")
        lines.append(f"primitive {prim.shape}")
        lines.append("center " + " ".join(f"{v:.9g}" for v in prim.center))
        lines.append("size " + " ".join(f"{v:.9g}" for v in prim.size))
        lines.append("albedo " + " ".join(f"{v:.9g}" for v in prim.albedo))
        lines.append(f"class {prim.class_id}")
        lines.append("end")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_scene(path):
    header = {"classes": N_CLASSES, "background": BACKGROUND_CLASS, "seed": None}
    bbox = np.concatenate([DEFAULT_BBOX_MIN, DEFAULT_BBOX_MAX])
    interesting = None
    prims = []
    block = None

    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, *rest = line.split()
            if block is not None:
                if key == "end":
                    for need in ("center", "size", "albedo", "class"):
                        if need not in block:
                            raise ConfigError(f"line {lineno}: primitive missing '{need}'")
                    prims.append(
                        ScenePrimitive(
                            block["shape"], block["center"], block["size"],
                            block["albedo"], block["class"],
                        )
                    )
                    block = None
                elif key in ("center", "size", "albedo"):
                    block[key] = [float(v) for v in rest]
                elif key == "class":
                    block["class"] = int(rest[0])
                else:
                    raise ConfigError(f"line {lineno}: unknown primitive key '{key}'")
            elif key == "primitive":
                block = {"shape": rest[0]}
            elif key == "bbox":
                if len(rest) != 6:
                    raise ConfigError(f"line {lineno}: bbox needs 6 values")
                bbox = np.array([float(v) for v in rest])
            elif key == "classes":
                header["classes"] = int(rest[0])
            elif key == "background":
                header["background"] = int(rest[0])
            elif key == "interesting":
                interesting = frozenset(int(v) for v in rest)
            elif key == "seed":
                header["seed"] = int(rest[0])
            else:
                raise ConfigError(f"line {lineno}: unknown key '{key}'")
    if block is not None:
        raise ConfigError("unterminated primitive block")
    if interesting is None:
        raise ConfigError("scene file missing 'interesting' line")
    return SceneSpec(
        primitives=prims,
        interesting=interesting,
        bbox_min=bbox[:3],
        bbox_max=bbox[3:],
        n_classes=header["classes"],
        background_class=header["background"],
        seed=header["seed"],
    )


# ---------------------------------------------------------------------------
# image / raster I/O

_DEPTH_MAGIC = b"DPR1"


def write_ppm(path, rgb):
    """Binary PPM, 8 bits per channel."""
    arr = np.clip(np.asarray(rgb), 0.0, 1.0)
    h, w = arr.shape[:2]
    data = (arr * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(data.tobytes())


def read_ppm(path):
    with open(path, "rb") as f:
        raw = f.read()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ConfigError("not a binary PPM file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    data = np.frombuffer(parts[4], dtype=np.uint8, count=w * h * 3)
    return data.reshape(h, w, 3).astype(np.float32) / maxval


def write_depth_raster(path, depth):
    arr = np.asarray(depth, dtype=np.float32)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(_DEPTH_MAGIC)
        f.write(np.array([w, h, 0], dtype="<u4").tobytes())
        f.write(arr.astype("<f4").tobytes())


def read_depth_raster(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _DEPTH_MAGIC:
        raise ConfigError("not a depth raster file")
    w, h, _ = np.frombuffer(raw[4:16], dtype="<u4")
    return np.frombuffer(raw[16:], dtype="<f4", count=w * h).reshape(h, w).copy()
