"""Summarize the pilot missions into pilot/README.md.

Reads the mission CSVs written by scripts/run_pilot.sh and computes the
hidden-object completeness for the occlusion runs from the exported meshes.
"""

import sys
from pathlib import Path

import numpy as np

from semrecon import evaluation as ev
from semrecon import mission as ms
from semrecon import scene as sc

THRESHOLD = 0.01  # meters, same radius the F1 metric uses


def final_row(mission_dir):
    header, rows = ms.read_csv(Path(mission_dir) / "mission.csv")
    return dict(zip(header, rows[-1]))


def hidden_completeness(mission_dir, scene, rng):
    verts, faces = ev.load_mesh_obj(Path(mission_dir) / "final.obj")
    gt = sc.sample_gt_surface(scene, {5}, 100_000, rng)
    if len(faces) == 0:
        return 0.0
    pred = ev.sample_mesh_points(verts, faces, 100_000, rng)
    return ev.match_fraction(gt, pred, THRESHOLD)


def main(root):
    root = Path(root)
    scene = sc.occlusion_scene()
    rng = np.random.default_rng(0)
    lines = [
        "# Pilot runs",
        "",
        "Generated by `scripts/run_pilot.sh` (single core, single thread).",
        "The convergence mission fixes what the desk preset actually reaches",
        "on the single-sphere scene; the occlusion grid fixes the bound used",
        "for the hidden object's completeness when exploration is disabled.",
        "",
        "## Convergence mission (single_sphere, fixed_pattern, seed 0)",
        "",
    ]
    row = final_row(root / "convergence")
    lines += [
        f"- final PSNR: {float(row['psnr_db']):.2f} dB",
        f"- final precision/completeness/F1 @1cm: "
        f"{float(row['precision']):.3f} / {float(row['completeness']):.3f} / "
        f"{float(row['f1']):.3f}",
        f"- wall time: {float(row['wall_time_s']):.0f} s",
        "",
        "## Occlusion grid (ours planner, 11 measurements)",
        "",
        "| epsilon | seed | final F1 | hidden-object completeness |",
        "|---------|------|----------|----------------------------|",
    ]
    for eps in ("0.0", "0.2"):
        for seed in (0, 1):
            d = root / f"occlusion_eps{eps}_seed{seed}"
            r = final_row(d)
            comp = hidden_completeness(d, scene, rng)
            lines.append(
                f"| {eps} | {seed} | {float(r['f1']):.3f} | {comp:.3f} |"
            )
    lines += [
        "",
        "The acceptance suite keeps the convergence thresholds at 22 dB PSNR",
        "and 0.6 F1 and pins the no-exploration hidden-object completeness",
        "bound at 0.2; the table above records what this build measured.",
        "",
    ]
    (root / "README.md").write_text("\n".join(lines))
    print("\n".join(lines))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "pilot")
