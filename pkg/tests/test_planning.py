"""View planning: entropy scores, utility decomposition, baseline policies."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from semrecon import fields as fl
from semrecon import planning as pl
from semrecon import scene as sc
from semrecon.errors import ConfigError, DomainError

LN2 = float(np.log(2.0))


def tiny_config(**kw):
    kw.setdefault("kind", "ours")
    kw.setdefault("interesting", frozenset({2}))
    kw.setdefault("n_uni", 12)
    kw.setdefault("k_top", 2)
    kw.setdefault("n_re", 3)
    kw.setdefault("n_ray_side", 8)
    kw.setdefault("n_pt", 16)
    return pl.PlannerConfig(**kw)


def tiny_model(resolution=8):
    return fl.MapModel(
        resolution=resolution, hidden_occ=8, hidden_rgb=8, seed=0, dtype=np.float64
    )


def carved_model_with_blob(resolution=16):
    """Hand-built field: o = sigmoid(40 * f0) via a pass-through occupancy MLP.

    Space is carved to near-zero occupancy except an uncertain blob (o = 0.5)
    around (0.6, 0, 0.2) and a fully solid wall slab x in [-0.25, 0.05] that
    hides the blob from the -x side.  The steep gain keeps the interpolation
    band between carved and solid nodes thin, so the wall faces themselves
    contribute almost no entropy.
    """
    model = tiny_model(resolution)
    p = model.store.params
    for name in ("mlp.occ.w0", "mlp.occ.w1", "mlp.occ.w2"):
        p[name].data[...] = 0.0
    p["mlp.occ.w0"].data[21, 0] = 1.0
    p["mlp.occ.w0"].data[21, 1] = -1.0
    p["mlp.occ.w1"].data[0, 0] = 1.0
    p["mlp.occ.w1"].data[1, 1] = 1.0
    p["mlp.occ.w2"].data[0, 0] = 40.0
    p["mlp.occ.w2"].data[1, 0] = -40.0

    ax = np.linspace(model.bbox_min[0], model.bbox_max[0], resolution)
    nodes = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    f0 = np.full(len(nodes), -3.0)
    blob = np.linalg.norm(nodes - np.array([0.6, 0.0, 0.2]), axis=1) < 0.35
    wall = (nodes[:, 0] > -0.25) & (nodes[:, 0] < 0.05)
    f0[blob] = 0.0
    f0[wall] = 3.0
    model.store.params["grid.occ"].data[:, 0] = f0
    return model


# ---------------------------------------------------------------------------
# point and ray entropy


def test_point_entropy_half_is_ln2():
    assert abs(pl.point_entropy(0.5) - LN2) < 1e-12


def test_point_entropy_endpoints_are_zero():
    assert pl.point_entropy(0.0) == 0.0
    assert pl.point_entropy(1.0) == 0.0


def test_point_entropy_worked_example():
    # -0.1 ln 0.1 - 0.9 ln 0.9, evaluated independently
    assert abs(pl.point_entropy(0.1) - 0.3250829733914482) < 1e-12


def test_point_entropy_rejects_out_of_range():
    with pytest.raises(DomainError):
        pl.point_entropy(1.2)
    with pytest.raises(DomainError):
        pl.point_entropy(np.array([0.3, -0.1]))


def test_point_entropy_symmetric():
    o = np.linspace(0.0, 1.0, 11)
    assert np.allclose(pl.point_entropy(o), pl.point_entropy(1.0 - o))


def test_ray_entropy_two_half_samples():
    # H(0.5) + T2 * H(0.5) = ln2 * (1 + 0.5)
    h = pl._ray_entropies(np.array([[0.5, 0.5]]))[0]
    assert abs(h - 1.5 * LN2) < 1e-12


def test_ray_entropy_blocked_by_opaque_sample():
    h = pl._ray_entropies(np.array([[1.0, 0.3, 0.5]]))[0]
    assert h == 0.0


def test_ray_entropy_empty_ray_is_zero():
    assert pl._ray_entropies(np.zeros((1, 5)))[0] == 0.0


@settings(deadline=None, max_examples=40)
@given(
    arrays(
        np.float64,
        st.integers(1, 12),
        elements=st.floats(0.0, 1.0, allow_nan=False),
    )
)
def test_ray_entropy_bounded_by_sample_count(o):
    h = pl._ray_entropies(o[None, :])[0]
    assert -1e-12 <= h <= len(o) * LN2 + 1e-12


@settings(deadline=None, max_examples=25)
@given(
    arrays(
        np.float64,
        st.integers(2, 10),
        elements=st.floats(0.0, 1.0, allow_nan=False),
    )
)
def test_ray_entropy_transmittance_discount_never_negative(o):
    # entropy with an opaque sample prepended is always zero
    blocked = np.concatenate([[1.0], o])
    assert pl._ray_entropies(blocked[None, :])[0] == 0.0


# ---------------------------------------------------------------------------
# config validation


def test_config_rejects_unknown_kind():
    with pytest.raises(ConfigError):
        pl.PlannerConfig(kind="greedy")


def test_config_rejects_refining_more_than_sampled():
    with pytest.raises(ConfigError):
        tiny_config(n_uni=5, k_top=6)


def test_config_rejects_negative_epsilon():
    with pytest.raises(ConfigError):
        tiny_config(epsilon=-0.1)


def test_config_rejects_zero_counts():
    with pytest.raises(ConfigError):
        tiny_config(n_pt=0)


def test_config_ours_needs_interesting_classes():
    with pytest.raises(ConfigError):
        pl.PlannerConfig(kind="ours", interesting=frozenset())


def test_config_default_candidate_count_is_200():
    cfg = pl.PlannerConfig(interesting=frozenset({2}))
    assert cfg.n_total == 200
    assert cfg.n_uni == 100 and cfg.k_top == 10 and cfg.n_re == 10


# ---------------------------------------------------------------------------
# utility decomposition (fresh model: o = 0.5 everywhere, semantics uniform)


def test_candidates_satisfy_utility_decomposition():
    cfg = tiny_config(epsilon=0.2)
    cands = pl.sample_candidates(tiny_model(), [], cfg, np.random.default_rng(0))
    assert len(cands) == cfg.n_total
    for c in cands:
        assert abs(c.u - (c.u_et + cfg.epsilon * c.u_er)) < 1e-9
        assert -1e-9 <= c.u_et <= c.u_er + 1e-9


def test_fresh_model_targets_lowest_class_on_ties():
    # uniform semantics argmax to the first class, so interesting = {1}
    # makes every hit ray interesting and the two scores coincide exactly
    cfg = tiny_config(interesting=frozenset({1}))
    cands = pl.sample_candidates(tiny_model(), [], cfg, np.random.default_rng(0))
    assert all(c.u_et == c.u_er for c in cands)
    assert max(c.u_er for c in cands) > 0


def test_fresh_model_other_classes_score_zero_exploitation():
    cfg = tiny_config(interesting=frozenset({2}))
    cands = pl.sample_candidates(tiny_model(), [], cfg, np.random.default_rng(0))
    assert all(c.u_et == 0.0 for c in cands)


def test_all_utilities_zero_selects_first_candidate():
    # epsilon 0 plus zero exploitation everywhere: an exact tie across all
    # candidates must resolve to the lowest index
    cfg = tiny_config(interesting=frozenset({2}), epsilon=0.0)
    best, cands = pl.select_next_view(tiny_model(), [], cfg, np.random.default_rng(0))
    assert all(c.u == 0.0 for c in cands)
    assert best.index == 0


def test_selection_skips_visited_poses():
    cfg = tiny_config()
    model = tiny_model()
    cands = pl.sample_candidates(model, [], cfg, np.random.default_rng(5))
    ranked = sorted(cands, key=lambda c: (-c.u, c.index))
    visited = [ranked[0].pose]
    best, _ = pl.select_next_view(model, visited, cfg, np.random.default_rng(5))
    assert best.pose.key() != ranked[0].pose.key()
    assert best.pose.key() == ranked[1].pose.key()


def test_selection_errors_when_everything_visited():
    cfg = tiny_config()
    model = tiny_model()
    cands = pl.sample_candidates(model, [], cfg, np.random.default_rng(9))
    visited = [c.pose for c in cands]
    with pytest.raises(ConfigError):
        pl.select_next_view(model, visited, cfg, np.random.default_rng(9))


def test_exploration_kind_ranks_by_exploration_score():
    cfg = tiny_config(kind="exploration", interesting=frozenset(), epsilon=0.0)
    best, cands = pl.select_next_view(tiny_model(), [], cfg, np.random.default_rng(1))
    assert best.u_er == max(c.u_er for c in cands)


# ---------------------------------------------------------------------------
# transmittance gating end to end: a hand-built field with a hidden blob


def test_occluded_uncertainty_scores_lower():
    model = carved_model_with_blob()
    cfg = tiny_config(n_ray_side=12, n_pt=64)
    facing = sc.hemisphere_view(0.0, 0.15, 2.0)  # +x side, sees the blob
    behind = sc.hemisphere_view(np.pi, 0.15, 2.0)  # -x side, wall in the way
    u_er, _ = pl._score_poses(model, [facing, behind], cfg)
    assert u_er[0] > 5.0 * u_er[1]
    assert u_er[1] >= 0.0


def test_blob_model_occupancy_levels_are_as_built():
    model = carved_model_with_blob()
    o, _, _ = model.query_batch(np.array([[0.6, 0.0, 0.2], [-0.1, 0.0, 0.0], [1.2, 1.2, 1.2]]))
    assert abs(o[0] - 0.5) < 0.05
    assert o[1] > 0.99
    assert o[2] < 0.01


# ---------------------------------------------------------------------------
# fixed spiral pattern


def test_spiral_starts_high_and_ends_at_min_elevation():
    cfg = tiny_config(kind="fixed_pattern")
    first = pl.spiral_view(0, cfg)
    last = pl.spiral_view(9, cfg)
    assert first.elevation > 1.3
    assert abs(last.elevation - cfg.elev_min) < 1e-12
    # elevation decreases monotonically along the pattern
    elevs = [pl.spiral_view(s, cfg).elevation for s in range(10)]
    assert all(a > b for a, b in zip(elevs, elevs[1:]))


def test_spiral_azimuth_step_is_golden_angle():
    cfg = tiny_config(kind="fixed_pattern")
    golden = np.pi * (3.0 - np.sqrt(5.0))
    a0 = pl.spiral_view(0, cfg).azimuth
    a1 = pl.spiral_view(1, cfg).azimuth
    assert abs(np.mod(a1 - a0, 2.0 * np.pi) - golden) < 1e-9


def test_spiral_is_deterministic():
    cfg = tiny_config(kind="fixed_pattern")
    a = [pl.spiral_view(s, cfg).pose.key() for s in range(10)]
    b = [pl.spiral_view(s, cfg).pose.key() for s in range(10)]
    assert a == b


def test_spiral_clamps_past_pattern_end():
    cfg = tiny_config(kind="fixed_pattern")
    assert pl.spiral_view(25, cfg).elevation == pl.spiral_view(9, cfg).elevation


# ---------------------------------------------------------------------------
# max view distance baseline


def test_max_view_distance_runs_from_pole_to_low_elevation():
    cfg = tiny_config(kind="max_view_distance", n_uni=100)
    top = sc.hemisphere_view(0.0, np.pi / 2, 2.0)
    chosen = pl.max_view_distance_view([top], cfg)
    assert chosen.elevation < 0.25
    d = np.dot(chosen.pose.position / 2.0, top.position / 2.0)
    assert np.arccos(np.clip(d, -1, 1)) > 1.2


def test_max_view_distance_needs_history():
    with pytest.raises(ConfigError):
        pl.max_view_distance_view([], tiny_config(kind="max_view_distance"))


def test_max_view_distance_spreads_out():
    cfg = tiny_config(kind="max_view_distance", n_uni=64)
    visited = [sc.hemisphere_view(0.0, np.pi / 2, 2.0)]
    for _ in range(5):
        c = pl.max_view_distance_view(visited, cfg)
        visited.append(c.pose)
    dirs = np.stack([p.position / 2.0 for p in visited])
    # pairwise geodesic separation stays healthy for the first few picks
    gram = np.clip(dirs @ dirs.T, -1, 1)
    np.fill_diagonal(gram, -1)
    assert np.arccos(gram.max()) > 0.3


# ---------------------------------------------------------------------------
# uniform baseline


def test_uniform_view_is_seed_reproducible():
    cfg = tiny_config(kind="uniform")
    a = pl.uniform_view(cfg, np.random.default_rng(4)).pose.key()
    b = pl.uniform_view(cfg, np.random.default_rng(4)).pose.key()
    assert a == b


def test_uniform_view_area_uniform_in_z():
    cfg = tiny_config(kind="uniform")
    rng = np.random.default_rng(0)
    z = np.array(
        [np.sin(pl.uniform_view(cfg, rng).elevation) for _ in range(4000)]
    )
    lo, hi = np.sin(cfg.elev_min), 1.0
    counts, _ = np.histogram(z, bins=10, range=(lo, hi))
    from scipy.stats import chisquare

    _, p = chisquare(counts)
    assert p > 0.01
    assert z.min() >= lo - 1e-12 and z.max() <= hi + 1e-12


# ---------------------------------------------------------------------------
# dispatch and hemisphere invariants


def test_next_view_dispatch_matches_kind():
    model = tiny_model()
    rng = np.random.default_rng(2)
    for kind in pl.PLANNER_KINDS:
        interesting = frozenset({1}) if kind in ("ours", "exploration") else frozenset()
        cfg = tiny_config(kind=kind, interesting=interesting)
        visited = [sc.hemisphere_view(0.0, np.pi / 2, 2.0)]
        chosen, cands = pl.next_view(model, visited, cfg, rng, step=0)
        assert len(cands) == (cfg.n_total if kind in ("ours", "exploration") else 1)
        r = np.linalg.norm(chosen.pose.position)
        assert abs(r - cfg.radius) < 1e-6
        assert cfg.elev_min - 1e-9 <= chosen.elevation <= np.pi / 2 + 1e-9


def test_candidate_normalizes_azimuth_and_clips_elevation():
    cfg = tiny_config()
    c = pl._candidate(0, 7.0, 2.0, cfg)
    assert 0.0 <= c.azimuth < 2.0 * np.pi
    assert abs(c.azimuth - np.mod(7.0, 2.0 * np.pi)) < 1e-12
    assert c.elevation == np.pi / 2
    low = pl._candidate(1, 0.0, -0.3, cfg)
    assert low.elevation == cfg.elev_min
