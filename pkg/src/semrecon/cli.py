"""Command line: run missions, sweep grids, aggregate, render, mesh.

Heavy imports stay inside the dispatch functions so --threads can pin the
BLAS thread pools before numpy loads.  Every failure exits nonzero with one
machine-readable line on stderr:

    ERROR {"type": "...", "message": "...", "step": ...}
"""

import argparse
import json
import os
import sys


def _parse_int_list(text):
    """"0,1,4" or "0:5" (half-open range) -> list of ints."""
    text = text.strip()
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi)))
    return [int(t) for t in text.split(",") if t.strip()]


def _parse_float_list(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _parse_str_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _add_config_flags(sub):
    sub.add_argument("--config", help="mission config file (dotted key = value lines)")
    sub.add_argument(
        "--set",
        dest="assignments",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config field by its dotted key (repeatable)",
    )
    sub.add_argument("--profile", help="configuration preset: desk or full")
    sub.add_argument("--scene", help="single_sphere | occlusion | generate:<seed> | path")
    sub.add_argument("--planner", help="ours | exploration | uniform | fixed_pattern | max_view_distance")
    sub.add_argument("--seed", type=int, help="mission seed")
    sub.add_argument("--epsilon", type=float, help="exploration weight")
    sub.add_argument("--max-steps", type=int, help="planning steps after the top view")
    sub.add_argument("--out-dir", help="output directory (relative paths join $SEMRECON_OUT)")


def _build_config(args):
    from . import mission as ms

    if args.config:
        cfg = ms.load_config(args.config)
    else:
        cfg = ms.profile_config(args.profile or "desk")
    if args.config and args.profile:
        ms.set_config_value(cfg, "profile", args.profile)
    for flag, key in (
        ("scene", "scene"),
        ("planner", "planner"),
        ("seed", "seed"),
        ("epsilon", "epsilon"),
        ("max_steps", "max_steps"),
        ("out_dir", "out_dir"),
    ):
        value = getattr(args, flag)
        if value is not None:
            ms.set_config_value(cfg, key, str(value))
    for assignment in args.assignments:
        if "=" not in assignment:
            from .errors import ConfigError

            raise ConfigError(f"--set needs KEY=VALUE, got {assignment!r}")
        key, value = assignment.split("=", 1)
        ms.set_config_value(cfg, key.strip(), value.strip())
    return cfg.validate()


def _cmd_run(args):
    from . import mission as ms

    cfg = _build_config(args)
    records = ms.run_mission(cfg, resume_from=args.resume)
    out = ms.resolve_out_dir(cfg)
    final = records[-1]
    print(
        f"mission complete: {out} final psnr_db={final.psnr_db:.2f} "
        f"f1={final.f1:.4f} precision={final.precision:.4f} "
        f"completeness={final.completeness:.4f}"
    )
    return 0


def _cmd_sweep(args):
    from . import mission as ms

    cfg = _build_config(args)
    dirs = ms.run_sweep(
        cfg,
        planners=_parse_str_list(args.planners),
        seeds=_parse_int_list(args.seeds),
        epsilons=_parse_float_list(args.epsilons) if args.epsilons else (None,),
        scenes=_parse_str_list(args.scenes) if args.scenes else (None,),
    )
    for d in dirs:
        print(d)
    return 0


def _cmd_aggregate(args):
    from . import mission as ms

    columns, rows = ms.aggregate(args.dirs, args.out)
    print(f"aggregated {len(args.dirs)} missions -> {os.path.join(args.out, 'summary.csv')}")
    return 0


def _cmd_render(args):
    import numpy as np

    from . import mission as ms
    from . import rendering as rd
    from . import scene as sc

    model, meta, _ = ms.load_checkpoint(args.checkpoint)
    os.makedirs(args.out, exist_ok=True)
    camera = sc.CameraModel.square(args.resolution)
    views = sc.fibonacci_hemisphere(args.n_views)
    for i, (az, el) in enumerate(views):
        pose = sc.hemisphere_view(az, el)
        view = rd.render_view(
            model, pose, camera.width, camera.height, args.n_samples, camera=camera
        )
        sc.write_ppm(os.path.join(args.out, f"view{i:02d}_rgb.ppm"), view.rgb)
        sc.write_depth_raster(os.path.join(args.out, f"view{i:02d}_depth.bin"), view.depth)
        rd.write_class_raster(os.path.join(args.out, f"view{i:02d}_class.ppm"), view.class_raster())
    print(f"rendered {len(views)} views -> {args.out}")
    return 0


def _cmd_mesh(args):
    from . import evaluation as ev
    from . import mission as ms

    model, meta, _ = ms.load_checkpoint(args.checkpoint)
    classes = set(_parse_int_list(args.classes)) if args.classes else None
    cfg = ev.EvalConfig(mesh_resolution=args.resolution, iso_threshold=args.iso)
    verts, faces = ev.extract_mesh(model, classes, cfg)
    ev.save_mesh_obj(args.out, verts, faces)
    print(f"mesh: {len(verts)} vertices, {len(faces)} triangles -> {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="semrecon",
        description="Active implicit reconstruction targeting interesting semantic classes.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        help="pin BLAS/OpenMP thread pools (set before numpy loads; 1 for determinism)",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run one mission")
    _add_config_flags(p_run)
    p_run.add_argument("--resume", help="error_checkpoint.npz to continue from")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a planner x seed x epsilon grid")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--planners", required=True, help="comma list of planner kinds")
    p_sweep.add_argument("--seeds", required=True, help="comma list or lo:hi range")
    p_sweep.add_argument("--epsilons", help="comma list of exploration weights")
    p_sweep.add_argument("--scenes", help="comma list of scene specs")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_agg = sub.add_parser("aggregate", help="summarize mission CSVs by planner and step")
    p_agg.add_argument("dirs", nargs="+", help="mission output directories")
    p_agg.add_argument("--out", required=True, help="summary output directory")
    p_agg.set_defaults(func=_cmd_aggregate)

    p_render = sub.add_parser("render", help="render novel views from a checkpoint")
    p_render.add_argument("--checkpoint", required=True)
    p_render.add_argument("--out", required=True, help="image output directory")
    p_render.add_argument("--n-views", type=int, default=8)
    p_render.add_argument("--resolution", type=int, default=100)
    p_render.add_argument("--n-samples", type=int, default=64)
    p_render.set_defaults(func=_cmd_render)

    p_mesh = sub.add_parser("mesh", help="extract and export the isosurface")
    p_mesh.add_argument("--checkpoint", required=True)
    p_mesh.add_argument("--out", required=True, help="mesh file path (.obj)")
    p_mesh.add_argument("--classes", help="comma list of class ids to keep (default: all)")
    p_mesh.add_argument("--resolution", type=int, default=128)
    p_mesh.add_argument("--iso", type=float, default=0.5)
    p_mesh.set_defaults(func=_cmd_mesh)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports everything
        payload = {
            "type": type(e).__name__,
            "message": str(e),
            "step": getattr(e, "step", None),
        }
        sys.stderr.write("ERROR " + json.dumps(payload) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
