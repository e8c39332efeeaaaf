"""Region construction: geodesic discs/annuli, subsampling, matrix assembly."""

import numpy as np
import pytest

import _oracles as orc
from tesmontage import (
    ForwardModel,
    annulus_offtarget,
    build_region_spec,
    build_target_spec,
    disc_target,
    subsample_offtarget,
)

CENTER = np.array([0.0, 0.0, 0.079])


def _geodesic(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(center)
    u = (points @ center) / (np.linalg.norm(points, axis=1) * r)
    return r * np.arccos(np.clip(u, -1.0, 1.0))


# ---------------------------------------------------------------------------
# disc_target


def test_disc_zero_radius_is_center_point():
    pts = disc_target(CENTER, radius=0.0)
    assert pts.shape == (1, 3)
    np.testing.assert_array_equal(pts[0], CENTER)


def test_disc_rejects_negative_radius_and_origin_center():
    with pytest.raises(ValueError):
        disc_target(CENTER, radius=-0.001)
    with pytest.raises(ValueError):
        disc_target([0.0, 0.0, 0.0], radius=0.01)


def test_disc_count_matches_area_estimate():
    pts = disc_target(CENTER, radius=0.010, spacing=0.001)
    expected = np.pi * 0.010**2 / 0.001**2
    assert abs(len(pts) - expected) <= 0.10 * expected


def test_disc_points_on_shell_within_geodesic_radius():
    pts = disc_target(CENTER, radius=0.012, spacing=0.002)
    np.testing.assert_allclose(
        np.linalg.norm(pts, axis=1), np.linalg.norm(CENTER), rtol=1e-12
    )
    assert np.max(_geodesic(pts, CENTER)) <= 0.012 * (1 + 1e-12)


def test_disc_handles_tilted_centers():
    tilted = np.array([0.03, -0.02, 0.06])
    tilted *= 0.079 / np.linalg.norm(tilted)
    pts = disc_target(tilted, radius=0.01, spacing=0.002)
    assert np.max(_geodesic(pts, tilted)) <= 0.01 * (1 + 1e-12)


# ---------------------------------------------------------------------------
# annulus_offtarget


def test_annulus_band_membership_standard_geometries():
    # 1.1 cm / 7 cm band and the 0.5 cm / 7 cm variant
    for inner in (0.011, 0.005):
        pts = annulus_offtarget(CENTER, inner=inner, outer=0.070, spacing=0.002)
        arc = _geodesic(pts, CENTER)
        assert np.min(arc) >= inner * (1 - 1e-6)
        assert np.max(arc) <= 0.070 * (1 + 1e-12)


def test_annulus_rejects_bad_radii():
    with pytest.raises(ValueError):
        annulus_offtarget(CENTER, inner=0.02, outer=0.01)
    with pytest.raises(ValueError):
        annulus_offtarget(CENTER, inner=0.0, outer=0.01)


def test_annulus_disjoint_from_matching_disc():
    disc = disc_target(CENTER, radius=0.010, spacing=0.0015)
    ring = annulus_offtarget(CENTER, inner=0.011, outer=0.03, spacing=0.0015)
    assert np.max(_geodesic(disc, CENTER)) < np.min(_geodesic(ring, CENTER))


def test_annulus_count_scales_with_band_area():
    spacing = 0.002
    pts = annulus_offtarget(CENTER, inner=0.01, outer=0.03, spacing=spacing)
    r = np.linalg.norm(CENTER)
    band = 2 * np.pi * r**2 * (np.cos(0.01 / r) - np.cos(0.03 / r))
    assert abs(len(pts) - band / spacing**2) <= 0.10 * band / spacing**2


# ---------------------------------------------------------------------------
# subsample_offtarget


def test_subsample_identity_cases():
    rng = np.random.default_rng(0)
    vox = rng.normal(size=(40, 3)) * 0.05
    full = subsample_offtarget(vox, CENTER, keep_fraction=1.0, seed=1)
    np.testing.assert_array_equal(full, np.arange(40))
    near = CENTER + rng.normal(size=(15, 3)) * 0.005
    kept = subsample_offtarget(near, CENTER, near_radius=0.04, keep_fraction=0.25, seed=1)
    np.testing.assert_array_equal(kept, np.arange(15))


def test_subsample_rejects_bad_fraction():
    vox = np.zeros((3, 3))
    for frac in (0.0, -0.2, 1.5):
        with pytest.raises(ValueError):
            subsample_offtarget(vox, CENTER, keep_fraction=frac)


def test_subsample_deterministic_and_keeps_near_ball():
    rng = np.random.default_rng(3)
    vox = rng.normal(size=(300, 3)) * 0.06
    a = subsample_offtarget(vox, CENTER, near_radius=0.03, keep_fraction=0.25, seed=7)
    b = subsample_offtarget(vox, CENTER, near_radius=0.03, keep_fraction=0.25, seed=7)
    np.testing.assert_array_equal(a, b)
    near_idx = np.nonzero(np.linalg.norm(vox - CENTER, axis=1) <= 0.03)[0]
    assert np.isin(near_idx, a).all()


def test_subsample_count_within_binomial_band():
    """Expected |near| + 0.25 |far| within 3 sigma, averaged over 100 seeds."""
    rng = np.random.default_rng(9)
    vox = rng.normal(size=(400, 3)) * 0.06
    dist = np.linalg.norm(vox - CENTER, axis=1)
    n_near = int(np.sum(dist <= 0.04))
    n_far = 400 - n_near
    counts = np.array(
        [
            len(subsample_offtarget(vox, CENTER, keep_fraction=0.25, seed=s))
            for s in range(100)
        ]
    )
    mean, sigma = orc.binomial_mean_sd(n_far, 0.25)
    observed_far = counts.mean() - n_near
    # the mean of 100 draws has sigma / 10 spread; 3 sigma band
    assert abs(observed_far - mean) <= 3.0 * sigma / np.sqrt(100)
    # and every single draw stays inside its own 3 sigma band
    assert np.all(np.abs(counts - n_near - mean) <= 3.0 * sigma)


# ---------------------------------------------------------------------------
# build_target_spec


def _random_forward(seed: int, n=6, m=9) -> ForwardModel:
    rng = np.random.default_rng(seed)
    return ForwardModel(
        t=rng.normal(size=(3 * m, n)),
        voxel_coords=rng.normal(size=(m, 3)) * 0.01,
        voxel_volumes=np.ones(m),
        electrode_ids=tuple(f"E{k}" for k in range(n)),
    )


def _unit_rows(rng, k):
    d = rng.normal(size=(k, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def test_single_group_row_matches_per_voxel_average():
    rng = np.random.default_rng(4)
    fm = _random_forward(4)
    rs = build_region_spec(3, 6, _unit_rows(rng, 3))
    ts = build_target_spec(fm, rs, e_des=0.7)
    i = rng.normal(size=fm.n_electrodes)
    # independent per-voxel oracle: project each target voxel's field
    per_voxel = []
    for pos, vi in enumerate(rs.target_idx):
        field = fm.fields_for_montage(i)[vi]
        per_voxel.append(rs.direction_field[pos] @ field)
    want = np.mean(per_voxel)
    got = float((ts.a_f @ i)[0])
    assert abs(got - want) <= 1e-12 * max(abs(want), 1.0)
    np.testing.assert_array_equal(ts.e_des, [0.7])


def test_duplicated_groups_give_identical_rows():
    rng = np.random.default_rng(5)
    fm = _random_forward(5)
    rs = build_region_spec(4, 5, _unit_rows(rng, 4))
    ts = build_target_spec(fm, rs, e_des=0.5, multi_site=[[0, 1], [2, 3]])
    rs_dup = build_region_spec(
        4, 5, np.vstack([rs.direction_field[:2], rs.direction_field[:2]])
    )
    # duplicate the first two voxels' rows by re-pointing the index set
    idx = rs.target_idx.copy()
    idx[2:] = idx[:2]
    # RegionSpec requires disjoint target/offtarget only, duplicates allowed
    from tesmontage import RegionSpec

    rs_same = RegionSpec(
        target_idx=idx,
        offtarget_idx=rs.offtarget_idx,
        direction_field=rs_dup.direction_field,
        gamma_f=rs.gamma_f,
        gamma_c=rs.gamma_c,
    )
    ts_same = build_target_spec(fm, rs_same, e_des=0.5, multi_site=[[0, 1], [2, 3]])
    assert ts_same.a_f.shape == (2, fm.n_electrodes)
    np.testing.assert_array_equal(ts_same.a_f[0], ts_same.a_f[1])
    assert ts.a_f.shape == (2, fm.n_electrodes)


def test_multi_site_must_partition():
    rng = np.random.default_rng(6)
    fm = _random_forward(6)
    rs = build_region_spec(3, 4, _unit_rows(rng, 3))
    with pytest.raises(ValueError):
        build_target_spec(fm, rs, e_des=1.0, multi_site=[[0, 1]])  # misses voxel 2
    with pytest.raises(ValueError):
        build_target_spec(fm, rs, e_des=1.0, multi_site=[[0, 1, 2], []])
    with pytest.raises(ValueError):
        build_target_spec(fm, rs, e_des=[1.0, 2.0], multi_site=[[0, 1, 2]])


def test_offtarget_block_weighting_is_energy_linear():
    """||a_c I||^2 must equal sum_j gamma_j ||E_j||^2 (weights under squares)."""
    rng = np.random.default_rng(7)
    fm = _random_forward(7)
    gamma_c = rng.uniform(0.5, 2.0, 5)
    rs = build_region_spec(4, 5, _unit_rows(rng, 4), gamma_c=gamma_c)
    ts = build_target_spec(fm, rs, e_des=1.0)
    i = rng.normal(size=fm.n_electrodes)
    fields = fm.fields_for_montage(i)
    want = sum(
        g * float(fields[vi] @ fields[vi])
        for g, vi in zip(gamma_c, rs.offtarget_idx)
    )
    got = float(np.sum((ts.a_c @ i) ** 2))
    assert abs(got - want) <= 1e-10 * want


def test_gamma_f_scales_rows_before_averaging():
    rng = np.random.default_rng(8)
    fm = _random_forward(8)
    dirs = _unit_rows(rng, 2)
    gamma_f = np.array([2.0, 0.5])
    rs_w = build_region_spec(2, 3, dirs, gamma_f=gamma_f)
    ts_w = build_target_spec(fm, rs_w, e_des=1.0)
    i = rng.normal(size=fm.n_electrodes)
    fields = fm.fields_for_montage(i)
    want = np.mean(
        [g * (d @ fields[vi]) for g, d, vi in zip(gamma_f, dirs, rs_w.target_idx)]
    )
    assert abs(float((ts_w.a_f @ i)[0]) - want) <= 1e-12 * max(abs(want), 1.0)


def test_e_des_field_layout_matches_block_order():
    rng = np.random.default_rng(9)
    fm = _random_forward(9)
    dirs = _unit_rows(rng, 3)
    rs = build_region_spec(3, 4, dirs)
    ts = build_target_spec(fm, rs, e_des=0.4)
    # stacked (3|F|,) in x/y/z block order, magnitude e_des along each direction
    want = 0.4 * dirs.T.reshape(-1)
    np.testing.assert_allclose(ts.e_des_field, want, atol=1e-15)
