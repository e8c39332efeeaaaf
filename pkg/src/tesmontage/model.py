"""Domain types shared by the forward model, region builders and solvers.

Conventions
-----------
* currents: mA; electric fields: V/m; geometry: meters.
* A forward matrix ``T`` has shape (3M, N) and is stored as three stacked
  M x N blocks for the x, y and z field components, so rows ``i``, ``M+i``
  and ``2M+i`` describe voxel ``i``.
* All types are immutable after construction and safe to share between
  threads.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]

#: |sum(I)| <= ZERO_SUM_TOL * I_safe for solver-produced montages.
ZERO_SUM_TOL = 1e-9
#: ||I||_inf <= I_safe * (1 + BOUND_REL_TOL); same slack for the l1 budget.
BOUND_REL_TOL = 1e-8
#: ||A_f I - E_des|| <= TARGET_ABS_TOL * (1 + ||E_des||) at optimal status.
TARGET_ABS_TOL = 1e-6


def _as_float_array(value, name: str, ndim: int) -> FloatArray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class ForwardModel:
    """Linear map from electrode currents (mA) to the electric field (V/m).

    Parameters
    ----------
    t : (3M, N) array
        Stacked [x-block; y-block; z-block] forward matrix in (V/m)/mA.
    voxel_coords : (M, 3) array
        Voxel positions in meters.
    voxel_volumes : (M,) array
        Strictly positive per-voxel volumes (m^3); on a 2-D shell testbed
        these act as area weights.
    electrode_ids : sequence of str
        One label per matrix column.
    reference_note : str
        Free text describing the return-electrode convention used when the
        columns were assembled.
    """

    t: FloatArray
    voxel_coords: FloatArray
    voxel_volumes: FloatArray
    electrode_ids: tuple[str, ...]
    reference_note: str = ""

    def __post_init__(self) -> None:
        t = _as_float_array(self.t, "t", 2)
        coords = _as_float_array(self.voxel_coords, "voxel_coords", 2)
        volumes = _as_float_array(self.voxel_volumes, "voxel_volumes", 1)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "voxel_coords", coords)
        object.__setattr__(self, "voxel_volumes", volumes)
        object.__setattr__(self, "electrode_ids", tuple(str(e) for e in self.electrode_ids))
        m = coords.shape[0]
        if coords.shape[1] != 3:
            raise ValueError("voxel_coords must be M x 3")
        if t.shape[0] != 3 * m:
            raise ValueError(f"t has {t.shape[0]} rows, expected 3*M = {3 * m}")
        if t.shape[1] != len(self.electrode_ids):
            raise ValueError("electrode_ids length must match matrix columns")
        if volumes.shape[0] != m:
            raise ValueError("voxel_volumes must have M entries")
        if not np.all(np.isfinite(t)):
            raise ValueError("forward matrix contains non-finite entries")
        if not np.all(volumes > 0):
            raise ValueError("voxel_volumes must be strictly positive")
        for arr in (t, coords, volumes):
            arr.setflags(write=False)

    @property
    def n_electrodes(self) -> int:
        return self.t.shape[1]

    @property
    def n_voxels(self) -> int:
        return self.voxel_coords.shape[0]

    def component_block(self, axis: int) -> FloatArray:
        """Return the M x N block for one field component (0=x, 1=y, 2=z)."""
        if axis not in (0, 1, 2):
            raise ValueError("axis must be 0, 1 or 2")
        m = self.n_voxels
        return self.t[axis * m : (axis + 1) * m, :]

    def rows_for_voxel(self, i: int) -> FloatArray:
        """Return the 3 x N row triple (x, y, z) describing voxel ``i``."""
        m = self.n_voxels
        if not 0 <= i < m:
            raise IndexError(f"voxel index {i} out of range")
        return self.t[[i, m + i, 2 * m + i], :]

    def fields_for_montage(self, currents: FloatArray) -> FloatArray:
        """Evaluate T @ I and return per-voxel field vectors, shape (M, 3)."""
        stacked = self.t @ np.asarray(currents, dtype=np.float64)
        return stacked.reshape(3, self.n_voxels).T


def stack_component_blocks(bx: FloatArray, by: FloatArray, bz: FloatArray) -> FloatArray:
    """Stack per-component M x N blocks into the canonical (3M, N) layout."""
    bx, by, bz = (np.asarray(b, dtype=np.float64) for b in (bx, by, bz))
    if not (bx.shape == by.shape == bz.shape):
        raise ValueError("component blocks must share one shape")
    return np.vstack([bx, by, bz])


@dataclass(frozen=True, eq=False)
class Montage:
    """Vector of per-electrode injected currents in mA."""

    currents: FloatArray

    def __post_init__(self) -> None:
        arr = _as_float_array(self.currents, "currents", 1)
        object.__setattr__(self, "currents", arr)
        arr.setflags(write=False)

    @property
    def n_electrodes(self) -> int:
        return self.currents.shape[0]

    def zero_sum_residual(self) -> float:
        return float(abs(np.sum(self.currents)))

    def l1(self) -> float:
        return float(np.sum(np.abs(self.currents)))

    def linf(self) -> float:
        return float(np.max(np.abs(self.currents))) if self.currents.size else 0.0


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Current safety limits.

    ``i_safe`` bounds each electrode (mA); the total injected budget is
    ``i_tot = i_tot_mul * i_safe`` and the l1 constraint reads
    ``||I||_1 <= l1_factor * i_tot``.  ``l1_factor`` defaults to 2 (total
    source-side current equals half the l1 norm of a zero-sum montage);
    it is exposed because the two conventions in circulation differ by
    exactly this factor.
    """

    i_safe: float
    i_tot_mul: float
    l1_factor: float = 2.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.i_safe) or self.i_safe <= 0:
            raise ValueError("i_safe must be a positive, finite current in mA")
        if not np.isfinite(self.i_tot_mul) or self.i_tot_mul <= 0:
            raise ValueError("i_tot_mul must be positive")
        if self.l1_factor <= 0:
            raise ValueError("l1_factor must be positive")
        if self.i_tot_mul < 1.0:
            warnings.warn(
                "i_tot_mul < 1 tightens the budget below a single electrode pair; "
                "allowed, but unusual outside derived equivalence instances",
                stacklevel=2,
            )

    @property
    def i_tot(self) -> float:
        return self.i_tot_mul * self.i_safe

    @property
    def l1_bound(self) -> float:
        return self.l1_factor * self.i_tot


@dataclass(frozen=True, eq=False)
class RegionSpec:
    """Target / off-target voxel index sets with directions and weights.

    ``direction_field`` holds one unit vector per target voxel (the desired
    field direction there); ``gamma_f`` / ``gamma_c`` are strictly positive
    diagonal weights (voxel volumes in the weighted variant, all ones by
    default).
    """

    target_idx: NDArray[np.int64]
    offtarget_idx: NDArray[np.int64]
    direction_field: FloatArray
    gamma_f: FloatArray
    gamma_c: FloatArray

    def __post_init__(self) -> None:
        tgt = np.asarray(self.target_idx, dtype=np.int64)
        off = np.asarray(self.offtarget_idx, dtype=np.int64)
        dirs = _as_float_array(self.direction_field, "direction_field", 2)
        gf = _as_float_array(self.gamma_f, "gamma_f", 1)
        gc = _as_float_array(self.gamma_c, "gamma_c", 1)
        object.__setattr__(self, "target_idx", tgt)
        object.__setattr__(self, "offtarget_idx", off)
        object.__setattr__(self, "direction_field", dirs)
        object.__setattr__(self, "gamma_f", gf)
        object.__setattr__(self, "gamma_c", gc)
        if np.intersect1d(tgt, off).size:
            raise ValueError("target and off-target index sets must be disjoint")
        if dirs.shape != (tgt.size, 3):
            raise ValueError("direction_field must be |F| x 3")
        norms = np.linalg.norm(dirs, axis=1)
        if tgt.size and np.max(np.abs(norms - 1.0)) > 1e-12:
            raise ValueError("direction rows must have unit norm within 1e-12")
        if gf.shape != (tgt.size,) or gc.shape != (off.size,):
            raise ValueError("gamma_f / gamma_c must match the index set sizes")
        if (tgt.size and np.min(gf) <= 0) or (off.size and np.min(gc) <= 0):
            raise ValueError("all region weights must be strictly positive")
        for arr in (tgt, off, dirs, gf, gc):
            arr.setflags(write=False)

    @property
    def n_target(self) -> int:
        return self.target_idx.size

    @property
    def n_offtarget(self) -> int:
        return self.offtarget_idx.size


@dataclass(frozen=True, eq=False)
class TargetSpec:
    """Matrices consumed by the solvers.

    ``a_f`` (K x N) holds the aggregated target constraint rows and
    ``e_des`` (K,) their desired values; ``a_c`` (3|C| x N) is the
    off-target block weighted so that ``||a_c @ I||_2^2`` equals the
    weighted off-target energy ``(T_c I)' diag(gamma) (T_c I)``.

    The raw (unweighted) per-voxel blocks are carried alongside because
    some programs need them: ``t_f`` / ``t_c`` stacked (3|F| x N) /
    (3|C| x N), the per-voxel target directions, the desired field vector
    ``e_des_field`` (3|F|,) and the off-target weights ``gamma_c``.
    """

    a_f: FloatArray
    e_des: FloatArray
    a_c: FloatArray
    t_f: FloatArray | None = None
    t_c: FloatArray | None = None
    e_des_field: FloatArray | None = None
    directions: FloatArray | None = None
    gamma_c: FloatArray | None = None

    def __post_init__(self) -> None:
        a_f = _as_float_array(self.a_f, "a_f", 2)
        e_des = _as_float_array(self.e_des, "e_des", 1)
        a_c = _as_float_array(self.a_c, "a_c", 2)
        object.__setattr__(self, "a_f", a_f)
        object.__setattr__(self, "e_des", e_des)
        object.__setattr__(self, "a_c", a_c)
        if a_f.shape[0] != e_des.shape[0]:
            raise ValueError("e_des must have one entry per a_f row")
        if a_c.shape[1] != a_f.shape[1]:
            raise ValueError("a_f and a_c must share the electrode dimension")
        if a_c.shape[0] % 3 != 0:
            raise ValueError("a_c must stack three component blocks (3|C| rows)")
        for name in ("t_f", "t_c", "e_des_field", "directions", "gamma_c"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, np.asarray(val, dtype=np.float64))
        for arr in (a_f, e_des, a_c):
            arr.setflags(write=False)

    @property
    def n_electrodes(self) -> int:
        return self.a_f.shape[1]

    @property
    def n_constraints(self) -> int:
        return self.a_f.shape[0]

    @property
    def n_offtarget(self) -> int:
        return self.a_c.shape[0] // 3


@dataclass(frozen=True, eq=False)
class ToleranceBands:
    """Per-component one-sided field tolerances over the off-target set.

    Six nonnegative vectors over C, one per (axis, sign): fields inside
    ``[-etol_minus, +etol_plus]`` on each axis are not penalized.
    """

    etol_x_plus: FloatArray
    etol_x_minus: FloatArray
    etol_y_plus: FloatArray
    etol_y_minus: FloatArray
    etol_z_plus: FloatArray
    etol_z_minus: FloatArray

    def __post_init__(self) -> None:
        first = None
        for name in self._field_names():
            arr = _as_float_array(getattr(self, name), name, 1)
            if np.min(arr, initial=0.0) < 0:
                raise ValueError(f"{name} must be nonnegative")
            if first is None:
                first = arr.shape
            elif arr.shape != first:
                raise ValueError("all six band vectors must share one length")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @staticmethod
    def _field_names() -> tuple[str, ...]:
        return (
            "etol_x_plus",
            "etol_x_minus",
            "etol_y_plus",
            "etol_y_minus",
            "etol_z_plus",
            "etol_z_minus",
        )

    @classmethod
    def from_scalars(
        cls,
        n_offtarget: int,
        etol_xyz: Sequence[float],
        etol_xyz_minus: Sequence[float] | None = None,
    ) -> "ToleranceBands":
        """Build axis-uniform bands from a scalar triplet [x, y, z].

        The minus-side triplet defaults to the plus side (symmetric bands).
        """
        plus = [float(v) for v in etol_xyz]
        if len(plus) != 3:
            raise ValueError("etol_xyz must be a 3-element triplet")
        minus = plus if etol_xyz_minus is None else [float(v) for v in etol_xyz_minus]
        if len(minus) != 3:
            raise ValueError("etol_xyz_minus must be a 3-element triplet")
        ones = np.ones(n_offtarget)
        return cls(
            etol_x_plus=plus[0] * ones,
            etol_x_minus=minus[0] * ones,
            etol_y_plus=plus[1] * ones,
            etol_y_minus=minus[1] * ones,
            etol_z_plus=plus[2] * ones,
            etol_z_minus=minus[2] * ones,
        )

    @classmethod
    def uniform(cls, n_offtarget: int, value: float) -> "ToleranceBands":
        """All six vectors equal to one scalar (axis-uniform bands)."""
        return cls.from_scalars(n_offtarget, [value, value, value])

    def stacked_plus(self) -> FloatArray:
        """Plus-side bands in [x; y; z] block order, shape (3|C|,)."""
        return np.concatenate([self.etol_x_plus, self.etol_y_plus, self.etol_z_plus])

    def stacked_minus(self) -> FloatArray:
        """Minus-side bands in [x; y; z] block order, shape (3|C|,)."""
        return np.concatenate([self.etol_x_minus, self.etol_y_minus, self.etol_z_minus])

    @property
    def n_offtarget(self) -> int:
        return self.etol_x_plus.shape[0]


@dataclass(frozen=True, eq=False)
class KktCertificate:
    """Dual variables returned by a conic solve, in natural (mA, V/m) units.

    ``mu`` multiplies the zero-sum equality, ``beta`` the target equalities,
    ``delta`` the single l1-epigraph constraint, ``nu``/``kappa`` the upper
    and lower per-electrode bounds, and ``lam`` the quadratic off-target
    bound where one exists.  The exponential family of sign-pattern
    inequalities behind the l1 bound is represented by ``delta`` alone;
    the full multiplier set is never materialized.
    """

    mu: float | None = None
    beta: FloatArray | None = None
    delta: float | None = None
    nu: FloatArray | None = None
    kappa: FloatArray | None = None
    lam: float | None = None


@dataclass(frozen=True, eq=False)
class SolveReport:
    """Outcome of one solver call."""

    status: str
    objective: float
    primal_residuals: dict[str, float] = field(default_factory=dict)
    kkt: KktCertificate | None = None
    iterations: int | None = None
    wall_time_s: float = 0.0
    notes: tuple[str, ...] = ()

    STATUS_OPTIMAL = "optimal"
    STATUS_INFEASIBLE = "infeasible"
    STATUS_MAX_ITER = "max-iter"
    STATUS_NUMERICAL_ERROR = "numerical-error"


STATUS_OPTIMAL = SolveReport.STATUS_OPTIMAL
STATUS_INFEASIBLE = SolveReport.STATUS_INFEASIBLE
STATUS_MAX_ITER = SolveReport.STATUS_MAX_ITER
STATUS_NUMERICAL_ERROR = SolveReport.STATUS_NUMERICAL_ERROR


def montage_bound_violations(montage: Montage, cs: ConstraintSet) -> list[str]:
    """Check the solver-produced montage invariants; return violations.

    Empty list means: |sum(I)| <= 1e-9 * I_safe, ||I||_inf within relative
    slack 1e-8 of I_safe and ||I||_1 within the same slack of the l1 budget.
    """
    problems: list[str] = []
    if montage.zero_sum_residual() > ZERO_SUM_TOL * cs.i_safe:
        problems.append(
            f"zero-sum residual {montage.zero_sum_residual():.3e} exceeds "
            f"{ZERO_SUM_TOL * cs.i_safe:.3e}"
        )
    if montage.linf() > cs.i_safe * (1.0 + BOUND_REL_TOL):
        problems.append(f"||I||_inf = {montage.linf():.6e} exceeds I_safe = {cs.i_safe}")
    if montage.l1() > cs.l1_bound * (1.0 + BOUND_REL_TOL):
        problems.append(f"||I||_1 = {montage.l1():.6e} exceeds budget {cs.l1_bound}")
    return problems


def _numeric_rank(a: FloatArray, rel_tol: float = 1e-10) -> int:
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def validate_problem(
    fm: ForwardModel,
    rs: RegionSpec,
    ts: TargetSpec,
    cs: ConstraintSet,
) -> list[str]:
    """Cross-check a fully constructed problem; return diagnostics.

    An empty list means every cross-invariant holds.  Rank findings are
    worded as warnings because the programs stay well posed whenever the
    rank deficiency is confined to directions excluded by the zero-sum
    constraint (the usual reference-electrode null direction).
    """
    diags: list[str] = []
    n = fm.n_electrodes
    m = fm.n_voxels
    if ts.a_f.shape[1] != n or ts.a_c.shape[1] != n:
        diags.append("dimension mismatch: target matrices disagree with electrode count")
    if rs.target_idx.size and np.max(rs.target_idx) >= m:
        diags.append("target_idx out of voxel range")
    if rs.offtarget_idx.size and np.max(rs.offtarget_idx) >= m:
        diags.append("offtarget_idx out of voxel range")
    if ts.a_c.shape[0] != 3 * rs.n_offtarget:
        raise ValueError(
            f"a_c has {ts.a_c.shape[0]} rows but the region lists "
            f"{rs.n_offtarget} off-target voxels (expected {3 * rs.n_offtarget})"
        )
    if rs.n_target and np.min(rs.gamma_f) <= 0:
        diags.append("nonpositive target weight")
    if rs.n_offtarget and np.min(rs.gamma_c) <= 0:
        diags.append("nonpositive off-target weight")

    if _numeric_rank(ts.a_f) < ts.a_f.shape[0]:
        diags.append("A_f not full row rank")
    rank_c = _numeric_rank(ts.a_c)
    if rank_c < n:
        msg = "A_c not full column rank"
        # Restrict to the zero-sum subspace: uniqueness of the quadratic
        # programs only needs definiteness there.
        basis = np.eye(n)[:, : n - 1] - np.eye(n)[:, 1:] if n > 1 else np.zeros((n, 0))
        restricted = _numeric_rank(ts.a_c @ basis)
        if restricted == n - 1:
            msg += " (rank N-1; definite on the zero-sum subspace, solutions stay unique)"
        else:
            msg += f" (rank {rank_c}; rank {restricted} on the zero-sum subspace)"
        diags.append(msg)
    # Touch cs so constraint validity is part of this report's contract.
    if cs.i_tot <= 0:
        diags.append("nonpositive total current budget")
    return diags
