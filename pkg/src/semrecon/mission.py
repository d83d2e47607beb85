"""Mission orchestration: the measure-train-plan loop, sweeps, aggregation.

A mission owns one scene, one planner, and one seed.  Its output directory is
self-describing: the resolved config copy plus the seed reproduce the CSVs
byte for byte in single-threaded mode (disable wall-clock recording for
that).  All randomness flows from one SeedSequence split into independent
trainer / planner / evaluator streams, so toggling per-step evaluation does
not disturb planning.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from . import evaluation as ev
from . import fields as fl
from . import planning as pl
from . import scene as sc
from . import training as tr
from .errors import AggregationError, ConfigError, MissionError

MISSION_COLUMNS = (
    "step",
    "planner",
    "seed",
    "psnr_db",
    "precision",
    "completeness",
    "f1",
    "u_er_selected",
    "u_et_selected",
    "wall_time_s",
)
PLANNING_COLUMNS = (
    "step",
    "candidate",
    "azimuth",
    "elevation",
    "u_er",
    "u_et",
    "epsilon",
    "u",
    "selected",
)
LOSS_COLUMNS = ("step", "iteration", "l_rgb", "l_depth", "l_sem", "total")
VIEW_COLUMNS = ("step", "azimuth", "elevation", "x", "y", "z")

PLANNER_KINDS = ("ours", "exploration", "uniform", "fixed_pattern", "max_view_distance")

OUTPUT_ROOT_ENV = "SEMRECON_OUT"


@dataclass
class MissionConfig:
    """Everything one mission needs, as flat scalars.

    Field defaults are the full-scale recipe; the desk profile overrides the
    expensive ones.  Sub-module configs are built on demand so their own
    validation runs.
    """

    profile: str = "full"
    scene: str = "single_sphere"
    planner: str = "ours"
    epsilon: float = 0.2
    interesting: frozenset | None = None  # None -> the scene's own set
    max_steps: int = 10
    seed: int = 0
    eval_every_step: bool = True
    psnr_every_step: bool = False  # PSNR at the final step regardless
    record_walltime: bool = True
    out_dir: str = ""

    model_resolution: int = 128
    model_hidden_occ: int = 32
    model_hidden_rgb: int = 128
    model_grid_lr_mult: float = 100.0
    model_dtype: str = "float32"

    camera_resolution: int = 400
    camera_fov_deg: float = 70.0
    camera_max_range: float = 8.0

    train_lambda_rgb: float = 1.0
    train_lambda_depth: float = 0.1
    train_lambda_sem: float = 1.0
    train_batch_size: int = 8000
    train_batch_current: int = 4000
    train_iters: int = 200
    train_n_samples: int = 128
    train_lr: float = 1e-3
    train_beta1: float = 0.9
    train_beta2: float = 0.999
    train_eps: float = 1e-8

    eval_n_test_views: int = 100
    eval_iso_threshold: float = 0.5
    eval_dist_threshold: float = 0.01
    eval_n_surface_points: int = 1_000_000
    eval_mesh_resolution: int = 128

    planner_n_uni: int = 100
    planner_k_top: int = 10
    planner_n_re: int = 10
    planner_n_ray_side: int = 80
    planner_n_pt: int = 200

    def validate(self):
        if self.planner not in PLANNER_KINDS:
            raise ConfigError(f"unknown planner {self.planner!r}; use one of {PLANNER_KINDS}")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be non-negative")
        if self.model_dtype not in ("float32", "float64"):
            raise ConfigError("model_dtype must be float32 or float64")
        if self.camera_resolution < 4:
            raise ConfigError("camera resolution must be at least 4 px")
        self.build_train()
        self.build_eval()
        return self

    def build_camera(self):
        return sc.CameraModel.square(
            self.camera_resolution, self.camera_fov_deg, self.camera_max_range
        )

    def build_model(self):
        return fl.MapModel(
            resolution=self.model_resolution,
            hidden_occ=self.model_hidden_occ,
            hidden_rgb=self.model_hidden_rgb,
            seed=self.seed,
            dtype=np.float32 if self.model_dtype == "float32" else np.float64,
            grid_lr_mult=self.model_grid_lr_mult,
        )

    def build_train(self):
        return tr.TrainConfig(
            lambda_rgb=self.train_lambda_rgb,
            lambda_depth=self.train_lambda_depth,
            lambda_sem=self.train_lambda_sem,
            batch_size=self.train_batch_size,
            batch_current=self.train_batch_current,
            iters=self.train_iters,
            n_samples=self.train_n_samples,
            lr=self.train_lr,
            beta1=self.train_beta1,
            beta2=self.train_beta2,
            eps=self.train_eps,
        )

    def build_eval(self):
        return ev.EvalConfig(
            n_test_views=self.eval_n_test_views,
            iso_threshold=self.eval_iso_threshold,
            dist_threshold=self.eval_dist_threshold,
            n_surface_points=self.eval_n_surface_points,
            mesh_resolution=self.eval_mesh_resolution,
        )

    def build_planner(self, interesting):
        return pl.PlannerConfig(
            kind=self.planner,
            n_uni=self.planner_n_uni,
            k_top=self.planner_k_top,
            n_re=self.planner_n_re,
            n_ray_side=self.planner_n_ray_side,
            n_pt=self.planner_n_pt,
            epsilon=self.epsilon,
            interesting=frozenset(interesting),
        )


# Desk-scale preset: small measurements and grids so a full mission fits in
# minutes of one CPU.  Only the four headline sizes are part of the preset
# contract (100 px, 64^3 grid, 64 samples/ray, 1e5 eval points); the rest are
# tuned runtime/quality trade-offs.
DESK_OVERRIDES = {
    "camera_resolution": 100,
    "model_resolution": 64,
    "train_n_samples": 64,
    "eval_n_surface_points": 100_000,
    "train_batch_size": 512,
    "train_batch_current": 256,
    "train_iters": 90,
    "train_lr": 2e-3,
    "eval_n_test_views": 8,
    "eval_mesh_resolution": 64,
    "planner_n_uni": 64,
    "planner_k_top": 5,
    "planner_n_re": 5,
    "planner_n_ray_side": 12,
    "planner_n_pt": 64,
}

_PROFILES = {"full": {}, "desk": DESK_OVERRIDES}


def profile_config(name="desk", **overrides):
    """A MissionConfig from a named profile plus keyword overrides."""
    if name not in _PROFILES:
        raise ConfigError(f"unknown profile {name!r}; use one of {sorted(_PROFILES)}")
    cfg = MissionConfig(profile=name, **_PROFILES[name])
    for key, value in overrides.items():
        if not hasattr(cfg, key):
            raise ConfigError(f"unknown config field {key!r}")
        setattr(cfg, key, value)
    return cfg.validate()


# ---------------------------------------------------------------------------
# config file format: dotted key = value lines, # comments, no silent typos


def _parse_classes(text):
    text = text.strip()
    if text in ("scene", "none", ""):
        return None
    try:
        return frozenset(int(t) for t in text.split(","))
    except ValueError as e:
        raise ConfigError(f"bad class list {text!r}: {e}") from None


def _format_classes(value):
    return "scene" if value is None else ",".join(str(c) for c in sorted(value))


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ConfigError(f"bad boolean {text!r}")


def _config_key(field_name):
    """Dataclass attribute -> dotted config key (train_iters -> train.iters)."""
    for prefix in ("model_", "camera_", "train_", "eval_", "planner_"):
        if field_name.startswith(prefix):
            return prefix[:-1] + "." + field_name[len(prefix):]
    return field_name


_FIELDS = {f.name: f for f in dataclasses.fields(MissionConfig)}
_KEY_TO_FIELD = {_config_key(n): n for n in _FIELDS}


def parse_config_text(text):
    """Parse the nested key-value mission format.

    The profile line (if any) is applied first so later lines override its
    preset; unknown and duplicated keys are hard errors.
    """
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEY_TO_FIELD:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if any(k == key for k, _ in pairs):
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        pairs.append((key, value))

    profile = dict(pairs).get("profile", "desk")
    cfg = profile_config(profile)
    for key, value in pairs:
        set_config_value(cfg, key, value)
    return cfg.validate()


def set_config_value(cfg, key, value):
    """Apply one 'dotted.key=text' assignment with type conversion."""
    if key not in _KEY_TO_FIELD:
        raise ConfigError(f"unknown config key {key!r}")
    name = _KEY_TO_FIELD[key]
    if name == "profile":
        if value not in _PROFILES:
            raise ConfigError(f"unknown profile {value!r}")
        cfg.profile = value
        return
    if name == "interesting":
        cfg.interesting = _parse_classes(value)
        return
    kind = str(_FIELDS[name].type)
    try:
        if kind == "bool":
            converted = _parse_bool(value)
        elif kind == "int":
            converted = int(value)
        elif kind == "float":
            converted = float(value)
        else:
            converted = value.strip()
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {e}") from None
    setattr(cfg, name, converted)


def format_config_text(cfg):
    """Canonical text for a config; parse(format(cfg)) round-trips."""
    lines = []
    for name in _FIELDS:
        value = getattr(cfg, name)
        if name == "interesting":
            text = _format_classes(value)
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = format(value, ".12g")
        else:
            text = str(value)
        lines.append(f"{_config_key(name)} = {text}")
    return "\n".join(lines) + "\n"


def load_config(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


# ---------------------------------------------------------------------------
# scene and path resolution


def resolve_scene(cfg):
    """Named generator, generate:<seed>, or a scene file path."""
    name = cfg.scene
    if name == "single_sphere":
        return sc.single_sphere_scene()
    if name == "occlusion":
        return sc.occlusion_scene()
    if name.startswith("generate:"):
        try:
            seed = int(name.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad generator spec {name!r}; use generate:<seed>") from None
        return sc.generate_scene(seed)
    if not os.path.exists(name):
        raise ConfigError(f"scene file not found: {name}")
    return sc.load_scene(name)


def resolve_out_dir(cfg):
    """Output directory under the environment root unless absolute."""
    out = cfg.out_dir or f"{_scene_tag(cfg.scene)}_{cfg.planner}_eps{cfg.epsilon:g}_seed{cfg.seed}"
    if os.path.isabs(out):
        return out
    return os.path.join(os.environ.get(OUTPUT_ROOT_ENV, "."), out)


def _scene_tag(name):
    base = os.path.basename(name)
    return base.rsplit(".", 1)[0].replace(":", "") or "scene"


# ---------------------------------------------------------------------------
# checkpoints


def snapshot_state(model, buffer, meta, optimizer=False, copy=False):
    """Arrays plus metadata describing one mission moment.

    With optimizer=True the Adam moments and step counter ride along so a
    resumed run continues the exact optimization trajectory.  copy=True
    detaches the arrays so later training cannot mutate the snapshot.
    """

    def grab(a):
        return a.copy() if copy else a

    arrays = {}
    for name, p in model.store.params.items():
        arrays[f"param.{name}"] = grab(p.data)
        if optimizer:
            arrays[f"adam_m.{name}"] = grab(p.m)
            arrays[f"adam_v.{name}"] = grab(p.v)
    if buffer is not None:
        for i, table in enumerate(buffer.tables):
            arrays[f"counts.{i}"] = grab(table.counts)
    meta = dict(meta)
    meta["model"] = {
        "resolution": model.resolution,
        "hidden_occ": model.hidden_occ,
        "hidden_rgb": model.hidden_rgb,
        "grid_lr_mult": model.grid_lr_mult,
        "dtype": model.store.dtype.name,
        "seed": model.seed,
    }
    meta["step_count"] = model.store.step_count
    return arrays, meta


def save_checkpoint(path, arrays, meta):
    arrays = dict(arrays)
    arrays["meta_json"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    np.savez_compressed(path, **arrays)


def load_checkpoint(path):
    """Returns (model, meta, counts list); Adam state restores when present."""
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint not found: {path}")
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta_json"]).decode("utf-8"))
        m = meta["model"]
        model = fl.MapModel(
            resolution=int(m["resolution"]),
            hidden_occ=int(m["hidden_occ"]),
            hidden_rgb=int(m["hidden_rgb"]),
            seed=int(m.get("seed", 0)),
            dtype=np.float64 if m.get("dtype") == "float64" else np.float32,
            grid_lr_mult=float(m.get("grid_lr_mult", 100.0)),
        )
        slots = {"param": "data", "adam_m": "m", "adam_v": "v"}
        for key in data.files:
            prefix, _, name = key.partition(".")
            if prefix not in slots:
                continue
            if name not in model.store.params:
                raise ConfigError(f"checkpoint parameter {name!r} has no slot in the model")
            target = getattr(model.store.params[name], slots[prefix])
            if target.shape != data[key].shape:
                raise ConfigError(
                    f"checkpoint parameter {name!r} shape {data[key].shape} "
                    f"does not match model {target.shape}"
                )
            target[...] = data[key]
        model.store.step_count = int(meta.get("step_count", 0))
        counts = []
        i = 0
        while f"counts.{i}" in data.files:
            counts.append(np.array(data[f"counts.{i}"]))
            i += 1
    return model, meta, counts


# ---------------------------------------------------------------------------
# CSV helpers: fixed formatting so equal runs produce equal bytes


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    return "nan" if math.isnan(f) else format(f, ".12g")


def write_csv(path, columns, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv(path):
    """Returns (columns, list of string rows); no type coercion."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise ConfigError(f"empty CSV: {path}")
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]


# ---------------------------------------------------------------------------
# the mission loop


class _RngSet:
    """Independent child streams so modules cannot perturb each other."""

    def __init__(self, seed):
        children = np.random.SeedSequence(seed).spawn(3)
        self.train = np.random.default_rng(children[0])
        self.plan = np.random.default_rng(children[1])
        self.eval = np.random.default_rng(children[2])

    def state(self):
        return {
            name: getattr(self, name).bit_generator.state
            for name in ("train", "plan", "eval")
        }

    def restore(self, state):
        for name, st in state.items():
            getattr(self, name).bit_generator.state = st


def _view_row(step, azimuth, elevation, pose):
    x, y, z = (float(v) for v in pose.position)
    return (step, azimuth, elevation, x, y, z)


def run_mission(config, resume_from=None):
    """Execute one mission; returns the list of MetricsRecords.

    Layout of the output directory:
      mission.cfg    resolved config copy (re-runs reproduce the CSVs)
      scene.txt      the scene actually reconstructed
      mission.csv    one row per planning step plus the final round
      planning.csv   every scored candidate, for utility auditing
      losses.csv     per-iteration loss terms
      views.csv      acquired measurement poses
      checkpoint.npz final model (render/mesh verbs consume this)
      final.obj      final masked surface mesh

    On any module error the mission state as of the failed step's start is
    saved to error_checkpoint.npz and a MissionError carries the step index;
    passing that file as resume_from re-runs from exactly that point.
    """
    config.validate()
    scene = resolve_scene(config)
    interesting = config.interesting if config.interesting is not None else scene.interesting
    if not interesting:
        raise ConfigError("no interesting classes: scene declares none and config sets none")

    out = resolve_out_dir(config)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "mission.cfg"), "w", encoding="utf-8") as fh:
        fh.write(format_config_text(config))
    sc.save_scene(os.path.join(out, "scene.txt"), scene)

    camera = config.build_camera()
    train_cfg = config.build_train()
    eval_cfg = config.build_eval()
    planner_cfg = config.build_planner(interesting)

    model = config.build_model()
    buffer = tr.ReplayBuffer(camera)
    rngs = _RngSet(config.seed)

    records = []
    mission_rows, planning_rows, loss_rows, view_rows = [], [], [], []
    prefixes = {"mission.csv": [], "planning.csv": [], "losses.csv": []}
    visited = []
    view_angles = []  # (azimuth, elevation) per measurement, for checkpoints
    start_step = 1

    if resume_from is not None:
        model, meta, counts = load_checkpoint(resume_from)
        rngs.restore(meta["rng_state"])
        start_step = int(meta["step"])
        view_angles = [tuple(v) for v in meta["views"]]
        for i, (az, el) in enumerate(view_angles):
            pose = sc.hemisphere_view(az, el)
            buffer.add_measurement(sc.render_measurement(scene, pose, camera))
            if i < len(counts):
                buffer.tables[i].counts[...] = counts[i]
            visited.append(pose)
            view_rows.append(_view_row(i, az, el, pose))
        # keep completed rows from the interrupted run; drop the failed
        # step's partial output so the resumed step rewrites it
        for name in prefixes:
            path = os.path.join(out, name)
            if os.path.exists(path):
                _, rows = read_csv(path)
                prefixes[name] = [
                    ",".join(r) for r in rows if int(float(r[0])) < start_step
                ]

    def checkpoint_meta(step):
        return {
            "step": step,
            "views": [list(v) for v in view_angles],
            "rng_state": rngs.state(),
            "scene": config.scene,
            "planner": config.planner,
            "seed": config.seed,
        }

    def flush():
        for name, columns, rows in (
            ("mission.csv", MISSION_COLUMNS, mission_rows),
            ("planning.csv", PLANNING_COLUMNS, planning_rows),
            ("losses.csv", LOSS_COLUMNS, loss_rows),
        ):
            lines = prefixes[name] + [",".join(_fmt(v) for v in r) for r in rows]
            with open(os.path.join(out, name), "w", encoding="utf-8", newline="\n") as fh:
                fh.write(",".join(columns) + "\n")
                for line in lines:
                    fh.write(line + "\n")
        write_csv(os.path.join(out, "views.csv"), VIEW_COLUMNS, view_rows)

    def acquire(step, azimuth, elevation):
        pose = sc.hemisphere_view(azimuth, elevation)
        buffer.add_measurement(sc.render_measurement(scene, pose, camera))
        visited.append(pose)
        view_angles.append((float(azimuth), float(elevation)))
        view_rows.append(_view_row(step, float(azimuth), float(elevation), pose))

    def evaluate(step, with_psnr):
        rec = ev.evaluate_model(
            model,
            scene,
            camera,
            eval_cfg,
            n_samples=train_cfg.n_samples,
            step=step,
            rng=rngs.eval,
            with_psnr=with_psnr,
        )
        records.append(rec)
        return rec

    def mission_row(step, rec, selected, wall):
        return (
            step,
            config.planner,
            config.seed,
            float("nan") if rec is None else rec.psnr_db,
            float("nan") if rec is None else rec.precision,
            float("nan") if rec is None else rec.completeness,
            float("nan") if rec is None else rec.f1,
            float("nan") if selected is None else selected.u_er,
            float("nan") if selected is None else selected.u_et,
            wall,
        )

    step = 0
    snapshot = snapshot_state(model, buffer, checkpoint_meta(start_step), optimizer=True, copy=True)
    try:
        if resume_from is None:
            # the mission opens from straight above the scene
            acquire(0, 0.0, math.pi / 2)

        for step in range(start_step, config.max_steps + 1):
            snapshot = snapshot_state(
                model, buffer, checkpoint_meta(step), optimizer=True, copy=True
            )
            t0 = time.perf_counter()
            reports = tr.train_round(model, buffer, train_cfg, rngs.train)
            loss_rows.extend(
                (step, i, r.l_rgb, r.l_depth, r.l_sem, r.total)
                for i, r in enumerate(reports)
            )
            rec = None
            if config.eval_every_step:
                rec = evaluate(step, with_psnr=config.psnr_every_step)
            selected, candidates = pl.next_view(
                model, visited, planner_cfg, rngs.plan, step - 1
            )
            planning_rows.extend(
                (
                    step,
                    c.index,
                    c.azimuth,
                    c.elevation,
                    c.u_er,
                    c.u_et,
                    config.epsilon,
                    c.u,
                    c is selected,
                )
                for c in candidates
            )
            wall = time.perf_counter() - t0 if config.record_walltime else 0.0
            mission_rows.append(mission_row(step, rec, selected, wall))
            acquire(step, selected.azimuth, selected.elevation)

        # final training round and evaluation after the last measurement
        step = config.max_steps + 1
        snapshot = snapshot_state(model, buffer, checkpoint_meta(step), optimizer=True, copy=True)
        t0 = time.perf_counter()
        reports = tr.train_round(model, buffer, train_cfg, rngs.train)
        loss_rows.extend(
            (step, i, r.l_rgb, r.l_depth, r.l_sem, r.total)
            for i, r in enumerate(reports)
        )
        rec = evaluate(step, with_psnr=True)
        wall = time.perf_counter() - t0 if config.record_walltime else 0.0
        mission_rows.append(mission_row(step, rec, None, wall))
    except Exception as e:
        flush()
        save_checkpoint(os.path.join(out, "error_checkpoint.npz"), *snapshot)
        raise MissionError(step, e) from e

    flush()
    save_checkpoint(
        os.path.join(out, "checkpoint.npz"),
        *snapshot_state(model, buffer, checkpoint_meta(step)),
    )
    verts, faces = ev.extract_mesh(model, interesting, eval_cfg)
    ev.save_mesh_obj(os.path.join(out, "final.obj"), verts, faces)
    return records


# ---------------------------------------------------------------------------
# sweeps


def run_sweep(base, planners, seeds, epsilons=(None,), scenes=(None,)):
    """Planner x seed x epsilon (x scene) grid of missions, sequentially.

    Returns the list of mission output directories.  Each mission gets its
    own subdirectory named after its condition, under base.out_dir.
    """
    base.validate()
    root = resolve_out_dir(base)
    dirs = []
    for scene in scenes:
        for planner in planners:
            for eps in epsilons:
                for seed in seeds:
                    cfg = dataclasses.replace(base)
                    cfg.planner = planner
                    cfg.seed = int(seed)
                    if eps is not None:
                        cfg.epsilon = float(eps)
                    if scene is not None:
                        cfg.scene = scene
                    tag = f"{_scene_tag(cfg.scene)}_{planner}_eps{cfg.epsilon:g}_seed{seed}"
                    cfg.out_dir = os.path.join(root, tag)
                    run_mission(cfg)
                    dirs.append(cfg.out_dir)
    return dirs


# ---------------------------------------------------------------------------
# aggregation


def _read_mission_rows(mission_dir):
    path = os.path.join(mission_dir, "mission.csv")
    if not os.path.exists(path):
        raise AggregationError(f"no mission.csv in {mission_dir}")
    header, rows = read_csv(path)
    if list(header) != list(MISSION_COLUMNS):
        raise AggregationError(f"{path}: unexpected columns {header}")
    col = {name: i for i, name in enumerate(header)}
    steps = [int(r[col["step"]]) for r in rows]
    planner = rows[0][col["planner"]] if rows else "?"
    psnr = [float(r[col["psnr_db"]]) for r in rows]
    f1 = [float(r[col["f1"]]) for r in rows]
    return planner, steps, psnr, f1


def aggregate(mission_dirs, out_dir):
    """Per-step mean and population std of PSNR/F1, grouped by planner.

    Emits summary.csv (one row per planner and step) and two line plots.
    Trials of one planner must share the same step sequence; offenders are
    listed in the error.
    """
    if not mission_dirs:
        raise AggregationError("no mission directories given")
    groups = {}
    for d in mission_dirs:
        planner, steps, psnr, f1 = _read_mission_rows(d)
        groups.setdefault(planner, []).append((d, steps, psnr, f1))

    for planner, trials in groups.items():
        reference = trials[0][1]
        offenders = [
            f"{d} has steps {steps}" for d, steps, _, _ in trials if steps != reference
        ]
        if offenders:
            raise AggregationError(
                f"planner {planner!r}: step sequences do not match "
                f"{trials[0][0]} ({reference}): " + "; ".join(offenders)
            )

    os.makedirs(out_dir, exist_ok=True)
    summary_rows = []
    series = {}
    for planner in sorted(groups):
        trials = groups[planner]
        steps = trials[0][1]
        psnr = np.array([t[2] for t in trials], dtype=np.float64)
        f1 = np.array([t[3] for t in trials], dtype=np.float64)
        series[planner] = (steps, f1.mean(axis=0), psnr.mean(axis=0))
        for j, step in enumerate(steps):
            summary_rows.append(
                (
                    planner,
                    step,
                    len(trials),
                    psnr[:, j].mean(),
                    psnr[:, j].std(),  # population std
                    f1[:, j].mean(),
                    f1[:, j].std(),
                )
            )
    columns = ("planner", "step", "n_trials", "psnr_mean", "psnr_std", "f1_mean", "f1_std")
    write_csv(os.path.join(out_dir, "summary.csv"), columns, summary_rows)
    _plot_series(series, out_dir)
    return columns, summary_rows


def _plot_series(series, out_dir):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for metric, idx in (("f1", 1), ("psnr", 2)):
        fig, ax = plt.subplots(figsize=(6, 4))
        for planner, data in sorted(series.items()):
            steps = data[0]
            values = np.asarray(data[idx], dtype=np.float64)
            keep = ~np.isnan(values)
            ax.plot(np.asarray(steps)[keep], values[keep], marker="o", label=planner)
        ax.set_xlabel("planning step")
        ax.set_ylabel(metric)
        ax.legend()
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, f"{metric}_vs_step.png"), dpi=110)
        plt.close(fig)


# ---------------------------------------------------------------------------
# planning-log audit


def audit_planning_log(path, tol=1e-6):
    """Check the utility identity on every logged candidate.

    Returns a list of violation descriptions; empty means the log is clean.
    Verifies u = u_et + epsilon * u_er and 0 <= u_et <= u_er per row.
    """
    header, rows = read_csv(path)
    if list(header) != list(PLANNING_COLUMNS):
        raise ConfigError(f"{path}: unexpected planning columns {header}")
    col = {name: i for i, name in enumerate(header)}
    violations = []
    for n, row in enumerate(rows, start=2):
        u_er = float(row[col["u_er"]])
        u_et = float(row[col["u_et"]])
        eps = float(row[col["epsilon"]])
        u = float(row[col["u"]])
        if abs(u - (u_et + eps * u_er)) > tol:
            violations.append(f"line {n}: u={u} != u_et + eps*u_er = {u_et + eps * u_er}")
        if not (-tol <= u_et <= u_er + tol):
            violations.append(f"line {n}: u_et={u_et} outside [0, u_er={u_er}]")
    return violations
