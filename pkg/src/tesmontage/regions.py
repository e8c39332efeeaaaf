"""Target / off-target region construction on spherical shells.

Regions live on a shell of fixed radius (the evaluation depth).  Discs
and annuli are geodesic: membership is by arc distance from the region
center, and point layouts use a sunflower (Fibonacci) arrangement with
area-uniform radial placement so the nominal spacing is honored even on
strongly curved caps.  All sampling is deterministic; the only random
operation (off-target subsampling) is seeded.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .model import FloatArray, ForwardModel, RegionSpec, TargetSpec

_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


def _rotation_from_north(center: FloatArray) -> FloatArray:
    """Rotation matrix taking the north pole direction onto ``center``."""
    c = center / np.linalg.norm(center)
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(z, c)
    s = np.linalg.norm(v)
    cos = float(np.dot(z, c))
    if s < 1e-15:
        if cos > 0:
            return np.eye(3)
        # antipodal: rotate pi about x
        return np.diag([1.0, -1.0, -1.0])
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx * ((1.0 - cos) / (s * s))


def _cap_points(
    shell_radius: float,
    inner_arc: float,
    outer_arc: float,
    spacing: float,
) -> FloatArray:
    """Sunflower layout between two geodesic radii around the north pole.

    Point count is the geodesic band area divided by spacing^2; radial
    placement is uniform in cap area, azimuths advance by the golden
    angle.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if outer_arc / shell_radius > np.pi:
        raise ValueError("outer radius exceeds the half-circumference of the shell")
    cos_in = np.cos(inner_arc / shell_radius)
    cos_out = np.cos(outer_arc / shell_radius)
    band_area = 2.0 * np.pi * shell_radius**2 * (cos_in - cos_out)
    n = max(1, int(round(band_area / spacing**2)))
    j = np.arange(n, dtype=np.float64)
    frac = (j + 0.5) / n
    cos_theta = cos_in - frac * (cos_in - cos_out)
    theta = np.arccos(np.clip(cos_theta, -1.0, 1.0))
    phi = j * _GOLDEN_ANGLE
    pts = np.column_stack(
        [
            np.sin(theta) * np.cos(phi),
            np.sin(theta) * np.sin(phi),
            np.cos(theta),
        ]
    )
    return shell_radius * pts


def disc_target(
    center: Sequence[float], radius: float, spacing: float = 0.001
) -> FloatArray:
    """Geodesic disc of voxels on the shell through ``center``.

    Returns the (n, 3) coordinates; ``radius = 0`` degenerates to the
    single center point.  The count approximates
    ``cap area / spacing^2`` (~ pi r^2 / spacing^2 on flat caps).
    """
    center = np.asarray(center, dtype=np.float64)
    shell_radius = float(np.linalg.norm(center))
    if shell_radius <= 0:
        raise ValueError("center must be away from the origin")
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if radius == 0:
        return center[None, :].copy()
    pts = _cap_points(shell_radius, 0.0, radius, spacing)
    return pts @ _rotation_from_north(center).T


def annulus_offtarget(
    center: Sequence[float],
    inner: float,
    outer: float,
    spacing: float = 0.001,
) -> FloatArray:
    """Geodesic annulus [inner, outer] on the shell through ``center``."""
    center = np.asarray(center, dtype=np.float64)
    shell_radius = float(np.linalg.norm(center))
    if shell_radius <= 0:
        raise ValueError("center must be away from the origin")
    if not 0 < inner < outer:
        raise ValueError("annulus needs 0 < inner < outer")
    pts = _cap_points(shell_radius, inner, outer, spacing)
    return pts @ _rotation_from_north(center).T


def subsample_offtarget(
    all_voxels: FloatArray,
    target_center: Sequence[float],
    near_radius: float = 0.040,
    keep_fraction: float = 0.25,
    seed: int | None = None,
) -> np.ndarray:
    """Thin an off-target voxel set while keeping a near-target ball.

    Every voxel within ``near_radius`` (Euclidean ball) of the target
    center is kept; each remaining voxel is kept independently with
    probability ``keep_fraction`` (seeded).  Returns sorted indices into
    ``all_voxels``.  Target voxels must already be excluded from the
    input.
    """
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must lie in (0, 1]")
    voxels = np.asarray(all_voxels, dtype=np.float64)
    center = np.asarray(target_center, dtype=np.float64)
    dist = np.linalg.norm(voxels - center[None, :], axis=1)
    near = dist <= near_radius
    rng = np.random.default_rng(seed)
    keep = near | (rng.random(voxels.shape[0]) < keep_fraction)
    return np.sort(np.nonzero(keep)[0]).astype(np.int64)


def build_region_spec(
    n_target: int,
    n_offtarget: int,
    direction_field: FloatArray,
    gamma_f: FloatArray | None = None,
    gamma_c: FloatArray | None = None,
) -> RegionSpec:
    """RegionSpec for the canonical voxel layout [target block; off-target block].

    Weights default to identity.
    """
    return RegionSpec(
        target_idx=np.arange(n_target, dtype=np.int64),
        offtarget_idx=n_target + np.arange(n_offtarget, dtype=np.int64),
        direction_field=np.asarray(direction_field, dtype=np.float64),
        gamma_f=np.ones(n_target) if gamma_f is None else gamma_f,
        gamma_c=np.ones(n_offtarget) if gamma_c is None else gamma_c,
    )


def build_target_spec(
    fm: ForwardModel,
    rs: RegionSpec,
    e_des: float | Sequence[float],
    multi_site: Sequence[Sequence[int]] | None = None,
) -> TargetSpec:
    """Aggregate forward rows into the solver-facing matrices.

    Each multi-site group contributes one constraint row: the average of
    its direction-projected, weight-scaled target rows (weights applied
    before averaging).  ``multi_site`` contains positions into the target
    set (0..|F|-1) and must partition it; the default is one group
    holding every target voxel.  ``e_des`` is one desired intensity per
    group (a scalar is broadcast).

    The off-target block is weighted so the quadratic objective
    ``||a_c I||_2^2`` equals ``sum_j gamma_j ||field_j||^2``, i.e. weights
    enter the energy linearly (square roots on the rows).
    """
    n_f = rs.n_target
    if multi_site is None:
        groups = [list(range(n_f))]
    else:
        groups = [list(g) for g in multi_site]
    seen: set[int] = set()
    for g in groups:
        if not g:
            raise ValueError("multi_site groups must be non-empty")
        seen.update(g)
    if seen != set(range(n_f)) or sum(len(g) for g in groups) != n_f:
        raise ValueError("multi_site must partition the target voxel set")

    e_arr = np.asarray(e_des, dtype=np.float64)
    if e_arr.ndim == 0:
        e_arr = np.full(len(groups), float(e_arr))
    if e_arr.shape != (len(groups),):
        raise ValueError("e_des must be scalar or one value per group")

    n = fm.n_electrodes
    projected = np.zeros((n_f, n))
    t_f_blocks = np.zeros((3, n_f, n))
    for fi in range(n_f):
        rows = fm.rows_for_voxel(int(rs.target_idx[fi]))
        t_f_blocks[:, fi, :] = rows
        projected[fi, :] = rs.gamma_f[fi] * (rs.direction_field[fi] @ rows)
    a_f = np.vstack([projected[g, :].mean(axis=0) for g in groups])

    m_c = rs.n_offtarget
    t_c_blocks = np.zeros((3, m_c, n))
    for ci in range(m_c):
        t_c_blocks[:, ci, :] = fm.rows_for_voxel(int(rs.offtarget_idx[ci]))
    t_c = t_c_blocks.reshape(3 * m_c, n)
    w = np.sqrt(np.repeat(rs.gamma_c[None, :], 3, axis=0).reshape(-1))
    a_c = w[:, None] * t_c

    per_voxel_e = np.empty(n_f)
    for gi, g in enumerate(groups):
        per_voxel_e[g] = e_arr[gi]
    e_des_field = (per_voxel_e[:, None] * rs.direction_field).T.reshape(-1)

    return TargetSpec(
        a_f=a_f,
        e_des=e_arr,
        a_c=a_c,
        t_f=t_f_blocks.reshape(3 * n_f, n),
        t_c=t_c,
        e_des_field=e_des_field,
        directions=rs.direction_field,
        gamma_c=rs.gamma_c,
    )
