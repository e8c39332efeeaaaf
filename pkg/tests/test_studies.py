"""Study orchestration: problem assembly, focality grid, subsample overlap.

Smoke-scale configurations only — the protocol-scale runs live in the
acceptance suite.
"""

import numpy as np
import pytest

from tesmontage import (
    FocalityConfig,
    STATUS_OPTIMAL,
    SubsampleConfig,
    run_focality_study,
    run_subsample_study,
)
from tesmontage.studies import INTENSITY_TO_THRESHOLD, build_problem

CENTER = np.array([0.0, 0.0, 0.079])


def test_build_problem_shapes_and_radial_direction(sphere_model, electrode_grid):
    p = build_problem(sphere_model, electrode_grid, CENTER, None, 1.0, spacing=0.005)
    m = p.fm.n_voxels
    assert p.fm.t.shape == (3 * m, 21)
    assert p.rs.target_idx.tolist() == [0]
    assert p.rs.offtarget_idx.size == m - 1
    assert p.ts.a_f.shape == (1, 21)
    assert p.ts.e_des.tolist() == [1.0]
    # single-voxel disc at radius 0: direction is radial-in at the center
    np.testing.assert_allclose(p.direction, -CENTER / np.linalg.norm(CENTER), rtol=1e-12)
    np.testing.assert_array_equal(p.fm.voxel_volumes, np.full(m, 0.005**3))


def test_build_problem_fixed_direction_is_normalized(sphere_model, electrode_grid):
    p = build_problem(
        sphere_model, electrode_grid, CENTER, np.array([0.0, 0.0, 2.0]), 0.5,
        spacing=0.006,
    )
    np.testing.assert_allclose(p.direction, [0.0, 0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(p.rs.direction_field[0], [0.0, 0.0, 1.0], atol=1e-15)


@pytest.fixture(scope="module")
def smoke_focality(sphere_model):
    config = FocalityConfig(cells=((200.0, 2.0),), n_random=2, spacing=0.008)
    return config, run_focality_study(config, sphere_model)


def test_focality_rows_and_fields(smoke_focality):
    config, table = smoke_focality
    assert len(table.rows) == 2
    lcmv, hinge = table.rows
    assert lcmv["method"] == "lcmv"
    assert hinge["method"] == "hinge_p2"
    for row in table.rows:
        assert row["status"] == STATUS_OPTIMAL
        assert row["i_safe_ma"] == 200.0 and row["i_tot_mul"] == 2.0
        assert row["n_act"] >= 0
        assert np.isfinite(row["v_th_m3"])
        assert row["threshold"] == pytest.approx(row["e_des"] / INTENSITY_TO_THRESHOLD)
    assert lcmv["band_x"] == lcmv["band_y"] == lcmv["band_z"] == 0.0


def test_focality_searched_bands_never_lose_to_zero_bands(smoke_focality):
    """The zero-band fallback makes the hinge row at worst match the lcmv row."""
    _, table = smoke_focality
    lcmv, hinge = table.rows
    assert hinge["n_act"] <= lcmv["n_act"]
    if hinge["n_act"] == lcmv["n_act"]:
        assert hinge["v_th_m3"] <= lcmv["v_th_m3"] + 1e-9


def test_focality_rows_identical_across_worker_counts(sphere_model):
    base = dict(
        cells=((200.0, 2.0), (300.0, 4.0)),
        n_random=2,
        spacing=0.010,
    )
    serial = run_focality_study(FocalityConfig(**base, workers=1), sphere_model)
    threaded = run_focality_study(FocalityConfig(**base, workers=2), sphere_model)
    assert len(serial.rows) == len(threaded.rows) == 4
    for a, b in zip(serial.rows, threaded.rows):
        assert a == b


def test_subsample_smoke_row(sphere_model):
    config = SubsampleConfig(keep_fractions=(0.5,), spacing=0.006)
    table = run_subsample_study(config, sphere_model)
    assert len(table.rows) == 1
    row = table.rows[0]
    assert row["status"] == STATUS_OPTIMAL
    assert 0 < row["kept_voxels"] < row["total_voxels"]
    # the near ball is always kept, so more than the nominal half survives
    assert row["kept_voxels"] > 0.5 * row["total_voxels"]
    assert 0.0 <= row["jaccard"] <= 1.0
    assert row["region_full"] >= 0 and row["region_sub"] >= 0
