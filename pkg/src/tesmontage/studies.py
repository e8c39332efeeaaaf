"""Focality and subsampling studies on the spherical testbed.

These orchestrate regions + solvers + metrics into the study grids that
the command-line `sweep` and `metrics` commands expose.  Study scales
adapt to the testbed: the desired intensity is placed at a fixed
fraction of the weakest cell's attainable maximum so every cell solves
in the same regime, and the activation threshold keeps the published
ratio to the desired intensity.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .equivalence import SweepTable
from .metrics import activation_map, jaccard, tolerance_search, v_th
from .model import (
    STATUS_OPTIMAL,
    ConstraintSet,
    FloatArray,
    ForwardModel,
    Montage,
    RegionSpec,
    TargetSpec,
    ToleranceBands,
)
from .optimize import HingeParams, compute_alpha_max_emax, solve_hinge, solve_lcmv_e
from .regions import (
    annulus_offtarget,
    build_region_spec,
    build_target_spec,
    disc_target,
    subsample_offtarget,
)
from .sphere import ElectrodeGrid, SphereModel, assemble_forward_matrix

# desired-intensity-to-threshold ratio of the published operating point
# (112.43 / 70.27); kept so study shapes are comparable
INTENSITY_TO_THRESHOLD = 1.6


@dataclass(frozen=True)
class StudyProblem:
    """A fully assembled single-target problem on the spherical shell."""

    fm: ForwardModel
    rs: RegionSpec
    ts: TargetSpec
    direction: FloatArray
    target_center: FloatArray
    spacing: float


def build_problem(
    model: SphereModel,
    grid: ElectrodeGrid,
    target_center: FloatArray,
    direction: FloatArray | None,
    e_des: float,
    target_radius: float = 0.0,
    offtarget_inner: float = 0.005,
    offtarget_outer: float = 0.070,
    spacing: float = 0.003,
) -> StudyProblem:
    """Assemble forward rows and region matrices around one target.

    ``direction=None`` uses the radial-in direction at each target
    voxel.  Voxel volumes are the shell-sampling proxy spacing^3.
    """
    center = np.asarray(target_center, dtype=np.float64)
    target = disc_target(center, target_radius, spacing)
    off = annulus_offtarget(center, offtarget_inner, offtarget_outer, spacing)
    voxels = np.vstack([target, off])
    volumes = np.full(voxels.shape[0], spacing**3)
    fm = assemble_forward_matrix(
        model, grid, voxels, reference=grid.center_index, voxel_volumes=volumes
    )
    n_f = target.shape[0]
    if direction is None:
        dirs = -target / np.linalg.norm(target, axis=1, keepdims=True)
    else:
        d = np.asarray(direction, dtype=np.float64)
        dirs = np.tile(d / np.linalg.norm(d), (n_f, 1))
    rs = build_region_spec(n_f, off.shape[0], dirs)
    ts = build_target_spec(fm, rs, e_des)
    return StudyProblem(
        fm=fm,
        rs=rs,
        ts=ts,
        direction=dirs[0],
        target_center=center,
        spacing=spacing,
    )


@dataclass(frozen=True)
class FocalityConfig:
    """Grid and search protocol for the banded-penalty focality study."""

    cells: tuple[tuple[float, float], ...] = (
        (200.0, 2.0),
        (200.0, 4.0),
        (300.0, 2.0),
        (300.0, 4.0),
    )
    target_center: tuple[float, float, float] = (0.0, 0.0, 0.079)
    direction: tuple[float, float, float] | None = None  # None -> surrogate default
    offtarget_inner: float = 0.005
    offtarget_outer: float = 0.070
    spacing: float = 0.004
    p: int = 2
    e_des_fraction: float = 0.65  # of the weakest cell's attainable maximum
    n_random: int = 30
    search_lo: float = 0.1  # of e_des
    search_hi: float = 0.7
    v_th_fraction: float = 0.8
    seed: int = 20250816
    workers: int = 1  # >1 solves cells in a thread pool


def _offtarget_fields(problem: StudyProblem, montage: Montage) -> FloatArray:
    fields = problem.fm.fields_for_montage(montage.currents)
    return fields[problem.rs.offtarget_idx]


def _focality_metrics(
    problem: StudyProblem,
    montage: Montage,
    e_des: float,
    threshold: float,
    v_fraction: float,
) -> tuple[int, float]:
    fields = _offtarget_fields(problem, montage)
    _, n_act = activation_map(fields, problem.direction, threshold)
    volumes = problem.fm.voxel_volumes[problem.rs.offtarget_idx]
    vol = v_th(fields @ problem.direction, e_des, v_fraction, volumes)
    return n_act, vol


def run_focality_study(
    config: FocalityConfig | None = None, model: SphereModel | None = None
) -> SweepTable:
    """Tolerance-searched banded penalty vs the energy minimizer per cell.

    One row per (cell, method) with activation count, superthreshold
    volume and the winning band triplet.  The scalar search objective is
    lexicographic: activation count first, volume as tie-break.
    """
    config = config or FocalityConfig()
    model = model or SphereModel.default()
    grid = ElectrodeGrid.default_patch()

    if config.direction is None:
        from .metrics import DEFAULT_PREFERRED_DIRECTION

        direction = DEFAULT_PREFERRED_DIRECTION
    else:
        d = np.asarray(config.direction, dtype=np.float64)
        direction = d / np.linalg.norm(d)

    base = build_problem(
        model,
        grid,
        np.asarray(config.target_center),
        direction,
        e_des=1.0,
        offtarget_inner=config.offtarget_inner,
        offtarget_outer=config.offtarget_outer,
        spacing=config.spacing,
    )

    # one shared e_des so every cell is compared at the same operating point
    caps = []
    for i_safe, mul in config.cells:
        cs = ConstraintSet(i_safe=i_safe, i_tot_mul=mul)
        _, e_max, _ = compute_alpha_max_emax(base.ts, cs)
        caps.append(float(e_max.sum()))
    e_des = config.e_des_fraction * min(caps)
    threshold = e_des / INTENSITY_TO_THRESHOLD

    ts = replace(
        base.ts,
        e_des=base.ts.e_des * e_des,
        e_des_field=base.ts.e_des_field * e_des,
    )
    problem = replace(base, ts=ts)

    total_volume = float(problem.fm.voxel_volumes[problem.rs.offtarget_idx].sum())
    lex_scale = 10.0 * max(total_volume, 1e-30)

    table = SweepTable(
        columns=(
            "i_safe_ma",
            "i_tot_mul",
            "method",
            "e_des",
            "threshold",
            "n_act",
            "v_th_m3",
            "band_x",
            "band_y",
            "band_z",
            "status",
        )
    )
    n_off = problem.rs.n_offtarget

    def run_cell(cell_idx: int, i_safe: float, mul: float) -> list[dict]:
        cs = ConstraintSet(i_safe=i_safe, i_tot_mul=mul)

        m_lcmv, r_lcmv = solve_lcmv_e(ts, cs)
        if r_lcmv.status == STATUS_OPTIMAL:
            n_act, vol = _focality_metrics(
                problem, m_lcmv, e_des, threshold, config.v_th_fraction
            )
        else:
            n_act, vol = -1, float("nan")
        lcmv_row = dict(
            i_safe_ma=i_safe,
            i_tot_mul=mul,
            method="lcmv",
            e_des=e_des,
            threshold=threshold,
            n_act=n_act,
            v_th_m3=vol,
            band_x=0.0,
            band_y=0.0,
            band_z=0.0,
            status=r_lcmv.status,
        )

        def hinge_metric(triplet: FloatArray) -> float:
            bands = ToleranceBands.from_scalars(n_off, triplet)
            m, r = solve_hinge(ts, cs, HingeParams(p=config.p, bands=bands))
            if r.status != STATUS_OPTIMAL:
                raise RuntimeError(f"hinge solve {r.status}")
            n_a, v = _focality_metrics(
                problem, m, e_des, threshold, config.v_th_fraction
            )
            return n_a * lex_scale + v

        best_bands, best_metric = tolerance_search(
            hinge_metric,
            mode="random",
            bounds=(config.search_lo * e_des, config.search_hi * e_des),
            n=config.n_random,
            seed=config.seed + cell_idx,
        )
        # the zero-band candidate reduces to the energy minimizer exactly
        # (p=2), so the searched set always contains a no-worse point;
        # strict wins must come from the random triplets
        try:
            zero_metric = hinge_metric(np.zeros(3))
        except RuntimeError:
            zero_metric = np.inf
        if zero_metric < best_metric:
            best_bands = np.zeros(3)
        m_hp, r_hp = solve_hinge(
            ts,
            cs,
            HingeParams(
                p=config.p, bands=ToleranceBands.from_scalars(n_off, best_bands)
            ),
        )
        if r_hp.status == STATUS_OPTIMAL:
            n_act_h, vol_h = _focality_metrics(
                problem, m_hp, e_des, threshold, config.v_th_fraction
            )
        else:
            n_act_h, vol_h = -1, float("nan")
        hinge_row = dict(
            i_safe_ma=i_safe,
            i_tot_mul=mul,
            method=f"hinge_p{config.p}",
            e_des=e_des,
            threshold=threshold,
            n_act=n_act_h,
            v_th_m3=vol_h,
            band_x=float(best_bands[0]),
            band_y=float(best_bands[1]),
            band_z=float(best_bands[2]),
            status=r_hp.status,
        )
        return [lcmv_row, hinge_row]

    # each cell is independent (its own seed), so rows are identical no
    # matter how many workers run; collection stays in cell order
    if config.workers > 1 and len(config.cells) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = [
                pool.submit(run_cell, idx, i_safe, mul)
                for idx, (i_safe, mul) in enumerate(config.cells)
            ]
            per_cell = [f.result() for f in futures]
    else:
        per_cell = [
            run_cell(idx, i_safe, mul)
            for idx, (i_safe, mul) in enumerate(config.cells)
        ]
    for rows in per_cell:
        for row in rows:
            table.add(**row)
    return table


@dataclass(frozen=True)
class SubsampleConfig:
    """Protocol for validating off-target subsampling."""

    i_safe_ma: float = 3.75
    i_tot_mul: float = 4.0
    e_des: float = 1.0
    band_fraction: float = 0.5  # of e_des, uniform bands
    region_fraction: float = 0.8  # superthreshold cut
    keep_fractions: tuple[float, ...] = (0.10, 0.25, 0.50)
    near_radius: float = 0.040
    target_center: tuple[float, float, float] = (0.0, 0.0, 0.077)
    offtarget_inner: float = 0.005
    offtarget_outer: float = 0.070
    spacing: float = 0.003
    p: int = 2
    seed: int = 20250816


def run_subsample_study(
    config: SubsampleConfig | None = None, model: SphereModel | None = None
) -> SweepTable:
    """Solve with full vs thinned off-target sets, compare regions.

    The superthreshold region of each montage is always evaluated on
    the full voxel set; only the solver's off-target matrix is thinned.
    One row per keep fraction with the region overlap (Jaccard).
    """
    config = config or SubsampleConfig()
    model = model or SphereModel.default()
    grid = ElectrodeGrid.default_patch()

    problem = build_problem(
        model,
        grid,
        np.asarray(config.target_center),
        None,  # radial-in
        e_des=config.e_des,
        offtarget_inner=config.offtarget_inner,
        offtarget_outer=config.offtarget_outer,
        spacing=config.spacing,
    )
    cs = ConstraintSet(i_safe=config.i_safe_ma, i_tot_mul=config.i_tot_mul)
    n_off = problem.rs.n_offtarget
    bands_value = config.band_fraction * config.e_des
    hp = HingeParams(
        p=config.p, bands=ToleranceBands.uniform(n_off, bands_value), ridge=1e-9
    )

    def region(montage: Montage) -> set[int]:
        fields = _offtarget_fields(problem, montage)
        proj = fields @ problem.direction
        cut = config.region_fraction * config.e_des
        return set(np.nonzero(proj >= cut)[0].tolist())

    m_full, r_full = solve_hinge(problem.ts, cs, hp)
    if r_full.status != STATUS_OPTIMAL:
        raise RuntimeError(f"full-set solve failed: {r_full.status}")
    region_full = region(m_full)

    off_coords = problem.fm.voxel_coords[problem.rs.offtarget_idx]
    table = SweepTable(
        columns=(
            "keep_fraction",
            "kept_voxels",
            "total_voxels",
            "jaccard",
            "region_full",
            "region_sub",
            "status",
        )
    )
    for keep in config.keep_fractions:
        kept = subsample_offtarget(
            off_coords,
            problem.target_center,
            near_radius=config.near_radius,
            keep_fraction=keep,
            seed=config.seed,
        )
        sub_rows = np.concatenate([kept, kept + n_off, kept + 2 * n_off])
        t_c_sub = problem.ts.t_c[sub_rows]
        gamma_sub = problem.ts.gamma_c[kept]
        w = np.sqrt(np.repeat(gamma_sub[None, :], 3, axis=0).reshape(-1))
        ts_sub = TargetSpec(
            a_f=problem.ts.a_f,
            e_des=problem.ts.e_des,
            a_c=w[:, None] * t_c_sub,
            t_f=problem.ts.t_f,
            t_c=t_c_sub,
            e_des_field=problem.ts.e_des_field,
            directions=problem.ts.directions,
            gamma_c=gamma_sub,
        )
        hp_sub = HingeParams(
            p=config.p,
            bands=ToleranceBands.uniform(kept.size, bands_value),
            ridge=1e-9,
        )
        m_sub, r_sub = solve_hinge(ts_sub, cs, hp_sub)
        if r_sub.status != STATUS_OPTIMAL:
            table.add(
                keep_fraction=keep,
                kept_voxels=int(kept.size),
                total_voxels=n_off,
                jaccard=float("nan"),
                region_full=len(region_full),
                region_sub=-1,
                status=r_sub.status,
            )
            continue
        region_sub = region(m_sub)
        table.add(
            keep_fraction=keep,
            kept_voxels=int(kept.size),
            total_voxels=n_off,
            jaccard=jaccard(region_full, region_sub),
            region_full=len(region_full),
            region_sub=len(region_sub),
            status=r_sub.status,
        )
    return table
