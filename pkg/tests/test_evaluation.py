"""Reconstruction metrics: masking, PSNR, meshing, and surface F1."""

import numpy as np
import pytest

from semrecon import evaluation as ev
from semrecon import fields as fl
from semrecon import scene as sc
from semrecon.errors import ConfigError, ShapeError


def passthrough_occupancy_mlp(model, gain=40.0):
    """Rewire MLP_occ so the occupancy logit equals gain * first grid feature."""
    p = model.store.params
    for name in ("mlp.occ.w0", "mlp.occ.w1", "mlp.occ.w2"):
        p[name].data[...] = 0.0
    p["mlp.occ.w0"].data[21, 0] = 1.0
    p["mlp.occ.w0"].data[21, 1] = -1.0
    p["mlp.occ.w1"].data[0, 0] = 1.0
    p["mlp.occ.w1"].data[1, 1] = 1.0
    p["mlp.occ.w2"].data[0, 0] = gain
    p["mlp.occ.w2"].data[1, 0] = -gain


def sphere_indicator_model(resolution=48, radius=0.5, sem_class=2, gain=8.0):
    """Smooth analytic occupancy crossing 0.5 exactly at the sphere surface,
    with semantics pinned to one class everywhere.  A gentle gain keeps the
    sigmoid near-linear across a lattice edge so interpolated crossings land
    on the true surface."""
    model = fl.MapModel(
        resolution=resolution, hidden_occ=8, hidden_rgb=8, seed=0, dtype=np.float64
    )
    passthrough_occupancy_mlp(model, gain)
    ax = np.linspace(model.bbox_min[0], model.bbox_max[0], resolution)
    nodes = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    model.store.params["grid.occ"].data[:, 0] = radius - np.linalg.norm(nodes, axis=1)
    model.store.params["grid.sem"].data[:, sem_class - 1] = 10.0
    return model


def small_eval(**kw):
    kw.setdefault("n_test_views", 2)
    kw.setdefault("n_surface_points", 20000)
    kw.setdefault("mesh_resolution", 48)
    return ev.EvalConfig(**kw)


# ---------------------------------------------------------------------------
# config and record contracts


def test_eval_config_defaults_match_full_recipe():
    cfg = ev.EvalConfig()
    assert cfg.n_test_views == 100
    assert cfg.iso_threshold == 0.5
    assert cfg.dist_threshold == 0.01
    assert cfg.n_surface_points == 1_000_000
    assert cfg.mesh_resolution == 128


def test_eval_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        ev.EvalConfig(iso_threshold=0.0)
    with pytest.raises(ConfigError):
        ev.EvalConfig(dist_threshold=-0.01)
    with pytest.raises(ConfigError):
        ev.EvalConfig(n_surface_points=0)
    with pytest.raises(ConfigError):
        ev.EvalConfig(mesh_resolution=1)


def test_metrics_record_accepts_consistent_row():
    ev.MetricsRecord(0, float("nan"), 0.5, 0.25, 2 * 0.5 * 0.25 / 0.75).check()
    ev.MetricsRecord(3, 22.0, 0.0, 0.0, 0.0).check()


def test_metrics_record_rejects_inconsistent_f1():
    with pytest.raises(ConfigError):
        ev.MetricsRecord(0, 20.0, 0.5, 0.5, 0.9).check()


def test_metrics_record_rejects_out_of_range():
    with pytest.raises(ConfigError):
        ev.MetricsRecord(0, 20.0, 1.2, 0.5, 0.7).check()


# ---------------------------------------------------------------------------
# semantic masking


def test_masked_query_keeps_interesting_occupancy():
    # fresh semantics argmax to class 1, so masking on {1} changes nothing
    model = fl.MapModel(resolution=8, hidden_occ=8, hidden_rgb=8, dtype=np.float64)
    s = ev.masked_query(model, [0.0, 0.0, 0.0], {1})
    assert abs(s.o - 0.5) < 1e-12
    assert np.allclose(s.s, 1.0 / 7.0)


def test_masked_query_zeroes_other_classes():
    model = fl.MapModel(resolution=8, hidden_occ=8, hidden_rgb=8, dtype=np.float64)
    s = ev.masked_query(model, [0.0, 0.0, 0.0], {2})
    assert s.o == 0.0


def test_masked_query_all_classes_is_identity():
    model = fl.MapModel(resolution=8, hidden_occ=8, hidden_rgb=8, dtype=np.float64)
    s = ev.masked_query(model, [0.3, -0.2, 0.1], set(range(1, 8)))
    assert abs(s.o - 0.5) < 1e-12


def test_masked_map_respects_trained_argmax():
    model = sphere_indicator_model(resolution=16, gain=40.0)
    inside = np.array([[0.0, 0.0, 0.0]])
    o_kept, _, _ = ev.MaskedMap(model, {2}).query_batch(inside)
    o_cut, _, _ = ev.MaskedMap(model, {5}).query_batch(inside)
    assert o_kept[0] > 0.99
    assert o_cut[0] == 0.0


# ---------------------------------------------------------------------------
# PSNR


def test_psnr_worked_example_exact():
    assert ev.psnr_from_mse(0.01) == 20.0


def test_psnr_identical_images_hits_floor():
    assert ev.psnr_from_mse(0.0) == 100.0


def test_psnr_quarter_mse():
    # mid-gray prediction against black: mse 0.25 -> about 6.02 dB
    assert abs(ev.psnr_from_mse(0.25) - 6.0205999) < 1e-6


def test_novel_view_psnr_fresh_model_on_empty_scene():
    # a fresh model renders near-gray everywhere; empty scene renders black
    empty = sc.SceneSpec(primitives=(), interesting=frozenset({2}))
    model = fl.MapModel(resolution=8, hidden_occ=8, hidden_rgb=8, dtype=np.float64)
    cam = sc.CameraModel.square(16)
    psnr = ev.novel_view_psnr(model, empty, cam, small_eval(), n_samples=8)
    assert 5.5 < psnr < 6.5


# ---------------------------------------------------------------------------
# mesh extraction against the analytic indicator field


def test_indicator_mesh_vertices_sit_on_the_sphere():
    model = sphere_indicator_model()
    verts, faces = ev.extract_mesh(model, None, small_eval())
    assert len(verts) > 500 and len(faces) > 500
    r = np.linalg.norm(verts, axis=1)
    assert np.abs(r - 0.5).max() < 0.02
    assert np.abs(r - 0.5).mean() < 0.008


def test_indicator_mesh_masked_equals_unmasked_for_own_class():
    model = sphere_indicator_model()
    cfg = small_eval(mesh_resolution=24)
    v1, f1 = ev.extract_mesh(model, {2}, cfg)
    v2, f2 = ev.extract_mesh(model, None, cfg)
    assert np.array_equal(v1, v2) and np.array_equal(f1, f2)


def test_masking_out_the_only_class_gives_empty_mesh():
    model = sphere_indicator_model(resolution=16)
    verts, faces = ev.extract_mesh(model, {5}, small_eval(mesh_resolution=16))
    assert verts.shape == (0, 3) and faces.shape == (0, 3)


def test_carved_field_gives_empty_mesh():
    model = fl.MapModel(resolution=8, hidden_occ=8, hidden_rgb=8, dtype=np.float64)
    passthrough_occupancy_mlp(model)
    model.store.params["grid.occ"].data[:, 0] = -3.0
    verts, faces = ev.extract_mesh(model, None, small_eval(mesh_resolution=12))
    assert verts.shape == (0, 3)


def test_indicator_mesh_f1_against_true_sphere():
    # two independent n-point samplings of a surface with area A only match
    # at threshold t with fraction about 1-exp(-n*pi*t^2/A), so the point
    # budget must be large enough that the ceiling clears the bar
    model = sphere_indicator_model()
    scene = sc.single_sphere_scene()
    cfg = small_eval(n_surface_points=150000)
    verts, faces = ev.extract_mesh(model, {2}, cfg)
    p, c, f1 = ev.f1_score(verts, faces, scene, {2}, cfg, np.random.default_rng(0))
    assert f1 > 0.95
    assert p > 0.95 and c > 0.95


# ---------------------------------------------------------------------------
# point sampling and matching


def test_mesh_point_sampling_is_area_uniform():
    # two triangles with a 9:1 area ratio; picks should follow the areas
    verts = np.array(
        [[0, 0, 0], [3, 0, 0], [0, 3, 0], [10, 0, 0], [11, 0, 0], [10, 1, 0]],
        dtype=np.float64,
    )
    faces = np.array([[0, 1, 2], [3, 4, 5]])
    pts = ev.sample_mesh_points(verts, faces, 20000, np.random.default_rng(0))
    near_small = np.mean(pts[:, 0] > 5.0)
    assert abs(near_small - 0.1) < 0.02


def test_mesh_point_sampling_empty_mesh():
    pts = ev.sample_mesh_points(np.zeros((0, 3)), np.zeros((0, 3), np.int64), 100,
                                np.random.default_rng(0))
    assert pts.shape == (0, 3)


def test_identical_meshes_score_near_one():
    model = sphere_indicator_model(resolution=24)
    verts, faces = ev.extract_mesh(model, None, small_eval(mesh_resolution=24))
    a = ev.sample_mesh_points(verts, faces, 100000, np.random.default_rng(1))
    b = ev.sample_mesh_points(verts, faces, 100000, np.random.default_rng(2))
    p, c, f1 = ev.point_set_scores(a, b, 0.01)
    assert min(p, c, f1) >= 0.99


def test_separated_point_sets_score_zero():
    a = np.random.default_rng(0).random((500, 3))
    b = a + np.array([10.0, 0.0, 0.0])
    assert ev.point_set_scores(a, b, 0.01) == (0.0, 0.0, 0.0)


def test_scores_swap_under_argument_exchange():
    rng = np.random.default_rng(3)
    a, b = rng.random((400, 3)), rng.random((300, 3))
    p1, c1, f1a = ev.point_set_scores(a, b, 0.05)
    p2, c2, f1b = ev.point_set_scores(b, a, 0.05)
    assert p1 == c2 and c1 == p2 and f1a == f1b


def test_match_fraction_monotone_in_threshold():
    rng = np.random.default_rng(4)
    a, b = rng.random((500, 3)), rng.random((500, 3))
    fracs = [ev.match_fraction(a, b, t) for t in (0.01, 0.05, 0.2, 1.0)]
    assert all(x <= y for x, y in zip(fracs, fracs[1:]))
    assert fracs[-1] == 1.0


def test_match_fraction_empty_inputs():
    pts = np.random.default_rng(0).random((10, 3))
    assert ev.match_fraction(np.zeros((0, 3)), pts, 0.1) == 0.0
    assert ev.match_fraction(pts, np.zeros((0, 3)), 0.1) == 0.0


def test_spatial_index_matches_brute_force():
    rng = np.random.default_rng(7)
    a, b = rng.random((1000, 3)), rng.random((1000, 3))
    from scipy.spatial import cKDTree

    d_tree, _ = cKDTree(b).query(a, k=1)
    d_brute = np.min(np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2), axis=1)
    assert np.allclose(d_tree, d_brute, atol=1e-12)


def test_f1_on_empty_mesh_is_zero():
    scene = sc.single_sphere_scene()
    out = ev.f1_score(np.zeros((0, 3)), np.zeros((0, 3), np.int64), scene, {2},
                      small_eval(), np.random.default_rng(0))
    assert out == (0.0, 0.0, 0.0)


# ---------------------------------------------------------------------------
# end-to-end record and mesh persistence


def test_evaluate_model_returns_checked_record():
    model = sphere_indicator_model()
    scene = sc.single_sphere_scene()
    cam = sc.CameraModel.square(16)
    cfg = small_eval(n_surface_points=100000, mesh_resolution=32)
    rec = ev.evaluate_model(model, scene, cam, cfg, n_samples=8, step=4,
                            rng=np.random.default_rng(0), with_psnr=False)
    assert rec.step == 4
    assert np.isnan(rec.psnr_db)
    assert rec.f1 > 0.8


def test_mesh_obj_roundtrip():
    model = sphere_indicator_model(resolution=16)
    verts, faces = ev.extract_mesh(model, None, small_eval(mesh_resolution=16))
    path = "/tmp/roundtrip_test.obj"
    ev.save_mesh_obj(path, verts, faces)
    v2, f2 = ev.load_mesh_obj(path)
    assert np.allclose(verts, v2, atol=1e-5)
    assert np.array_equal(faces, f2)


def test_mesh_obj_rejects_unknown_lines(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nvn 1 0 0\n")
    with pytest.raises(ShapeError):
        ev.load_mesh_obj(str(p))


# ---------------------------------------------------------------------------
# against the committed convergence pilot


def test_pilot_mesh_bounding_box_tracks_the_sphere():
    from conftest import PILOT_DIR
    from semrecon import mission as ms

    ckpt = PILOT_DIR / "convergence" / "checkpoint.npz"
    assert ckpt.exists(), "pilot artifacts missing; run scripts/run_pilot.sh"
    model, meta, _ = ms.load_checkpoint(ckpt)
    cfg = ev.EvalConfig(mesh_resolution=96)
    verts, faces = ev.extract_mesh(model, {2}, cfg)
    assert len(verts) > 0
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    # sphere of radius 0.5 at the origin; 10% of the 1 m extent per bound
    for axis in range(3):
        assert abs(lo[axis] - (-0.5)) <= 0.1
        assert abs(hi[axis] - 0.5) <= 0.1
