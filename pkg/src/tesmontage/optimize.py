"""Convex montage-design programs over a shared constraint family.

Every program optimizes the electrode current vector I subject to
(subsets of) the shared constraints: target equality ``A_f I = E_des``,
total-current budget ``||I||_1 <= l1_factor * I_tot``, per-electrode
safety ``||I||_inf <= I_safe``, and current conservation ``1^T I = 0``.
The l1/linf bounds are encoded through their standard epigraph atoms
(never an exponential inequality family).

Numerics: problems are solved in the scaled variable ``y = I / I_safe``
so the box is always [-1, 1]; off-target quadratic forms are compressed
through a QR factor (same Gram matrix, far fewer rows); after solving,
the montage is re-centered by subtracting its mean, making the zero-sum
invariant exact at machine precision.  Dual variables are mapped back to
the unscaled problem so KKT residuals can be checked in natural units.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .model import (
    STATUS_INFEASIBLE,
    STATUS_MAX_ITER,
    STATUS_NUMERICAL_ERROR,
    STATUS_OPTIMAL,
    ConstraintSet,
    FloatArray,
    KktCertificate,
    Montage,
    SolveReport,
    TargetSpec,
    ToleranceBands,
)

# Interior-point accuracy targets; acceptance tolerances derive from these.
SOLVER_OPTS: dict[str, float | int] = {
    "tol_gap_rel": 1e-8,
    "tol_gap_abs": 1e-10,
    "tol_feas": 1e-9,
    "max_iter": 100_000,
}

# Retry profile for degenerate instances where Clarabel stalls just shy of
# the strict targets (e.g. an energy ball exactly tangent to the optimal
# face of the current polytope).  Still well inside every shipped tolerance.
RELAXED_OPTS: dict[str, float | int] = {
    "tol_gap_rel": 1e-7,
    "tol_gap_abs": 1e-9,
    "tol_feas": 1e-8,
    "max_iter": 100_000,
}

STAGE2_SLACK = 1e-8
_DUAL_FLOOR = 1e-300


@dataclass(frozen=True)
class HingeParams:
    """Banded one-sided penalty configuration.

    p selects the penalty power (1: LP, 2: QP, 3: power cone).  Bands
    hold the per-component tolerances.  ``ridge`` adds
    ``ridge * ||I||_2^2`` for tie-breaking in flat regimes;
    ``one_sided`` drops the lower electrode bound (keeps I <= I_safe
    only), used when matching the l1-regularized program's variant.
    """

    p: int
    bands: ToleranceBands
    ridge: float = 0.0
    one_sided: bool = False

    def __post_init__(self) -> None:
        if self.p not in (1, 2, 3):
            raise ValueError(f"p must be 1, 2 or 3, got {self.p}")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


@dataclass(frozen=True)
class L1L1Params:
    """l1 data-fit + relaxed-l1 off-target + l1 current regularizer."""

    eps: float
    alpha_reg: float
    ridge: float = 0.0
    one_sided: bool = False

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ValueError("eps must be strictly positive")
        if self.alpha_reg < 0:
            raise ValueError("alpha_reg must be nonnegative")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


@dataclass
class BiconvexState:
    """Trace of the alternating magnitude-maximization scheme."""

    directions: FloatArray
    montage: Montage
    objective_trace: FloatArray
    rounds: int


def _qr_rows(a: FloatArray) -> FloatArray:
    """Row-compressed factor R with ||R x|| = ||a x|| for all x."""
    if a.shape[0] == 0:
        return np.zeros((0, a.shape[1]))
    return np.linalg.qr(a, mode="r")


def _shared_constraints(
    y: cp.Variable, cs: ConstraintSet, one_sided: bool = False
) -> dict[str, cp.constraints.constraint.Constraint | None]:
    zero = cp.sum(y) == 0
    upper = y <= 1.0
    lower = None if one_sided else (-y <= 1.0)
    l1 = cp.norm1(y) <= cs.l1_factor * cs.i_tot_mul
    return {"zero": zero, "upper": upper, "lower": lower, "l1": l1}


def _constraint_list(handles: dict) -> list:
    return [c for c in handles.values() if c is not None]


def _map_status(raw: str | None) -> str:
    if raw == cp.OPTIMAL:
        return STATUS_OPTIMAL
    if raw in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return STATUS_INFEASIBLE
    if raw in (cp.OPTIMAL_INACCURATE, cp.USER_LIMIT):
        return STATUS_MAX_ITER
    return STATUS_NUMERICAL_ERROR


def _attempt(prob: cp.Problem, opts: dict[str, float | int]) -> str | None:
    try:
        prob.solve(solver=cp.CLARABEL, **opts)
        return prob.status
    except (cp.SolverError, ValueError, ArithmeticError):
        return None


def _num_iters(prob: cp.Problem) -> int:
    stats = getattr(prob, "solver_stats", None)
    if stats is not None and stats.num_iters is not None:
        return int(stats.num_iters)
    return 0


def _run(prob: cp.Problem) -> tuple[str, float, int]:
    """Solve, returning (mapped status, wall time, iterations).

    Runs the strict accuracy profile first; when the solver stops at
    reduced accuracy, one retry at the relaxed profile decides between
    "optimal" and the honest reduced-accuracy status.
    """
    t0 = time.perf_counter()
    raw = _attempt(prob, SOLVER_OPTS)
    iters = _num_iters(prob)
    if raw in (cp.OPTIMAL_INACCURATE, cp.USER_LIMIT):
        retry = _attempt(prob, RELAXED_OPTS)
        iters += _num_iters(prob)
        if retry == cp.OPTIMAL:
            raw = retry
        elif any(v.value is None for v in prob.variables()):
            # The retry wiped the reduced-accuracy point; repopulate it.
            _attempt(prob, SOLVER_OPTS)
            iters += _num_iters(prob)
    wall = time.perf_counter() - t0
    return _map_status(raw), wall, iters


def _polished_currents(y: cp.Variable, cs: ConstraintSet) -> FloatArray:
    i = np.asarray(y.value, dtype=np.float64) * cs.i_safe
    return i - i.mean()


def _dual(handle, scale: float = 1.0) -> FloatArray | float:
    if handle is None or handle.dual_value is None:
        return 0.0
    v = np.asarray(handle.dual_value, dtype=np.float64)
    if v.ndim == 0:
        return float(v) * scale
    return v * scale


def _certificate(
    handles: dict,
    cs: ConstraintSet,
    n: int,
    beta: FloatArray | None = None,
    lam: float = 0.0,
) -> KktCertificate:
    inv = 1.0 / cs.i_safe
    nu = _dual(handles["upper"], inv)
    kappa = _dual(handles["lower"], inv)
    if np.isscalar(nu):
        nu = np.zeros(n)
    if np.isscalar(kappa):
        kappa = np.zeros(n)
    return KktCertificate(
        mu=float(np.atleast_1d(_dual(handles["zero"], inv))[0]),
        beta=np.zeros(0) if beta is None else np.atleast_1d(beta).astype(np.float64),
        delta=float(np.atleast_1d(_dual(handles["l1"], inv))[0]),
        nu=np.asarray(nu, dtype=np.float64),
        kappa=np.asarray(kappa, dtype=np.float64),
        lam=float(lam),
    )


def _failure(
    n: int, status: str, wall: float, iters: int, notes: list[str]
) -> tuple[Montage, SolveReport]:
    report = SolveReport(
        status=status,
        objective=float("nan"),
        primal_residuals={},
        kkt=None,
        iterations=iters,
        wall_time_s=wall,
        notes=notes,
    )
    return Montage(currents=np.zeros(n)), report


def _base_residuals(i: FloatArray, cs: ConstraintSet) -> dict[str, float]:
    return {
        "zero_sum": abs(float(i.sum())),
        "linf_excess": max(0.0, float(np.abs(i).max(initial=0.0)) - cs.i_safe),
        "l1_excess": max(0.0, float(np.abs(i).sum()) - cs.l1_bound),
    }


def solve_lcmv_e(
    ts: TargetSpec, cs: ConstraintSet, ridge: float = 0.0
) -> tuple[Montage, SolveReport]:
    """Minimize off-target energy ||A_c I||^2 under the target equality.

    Infeasible targets surface as status "infeasible" (zero montage),
    never as an exception.
    """
    n = ts.n_electrodes
    r_c = _qr_rows(ts.a_c) * cs.i_safe
    af_s = ts.a_f * cs.i_safe

    y = cp.Variable(n)
    handles = _shared_constraints(y, cs)
    target_eq = af_s @ y == ts.e_des
    constraints = _constraint_list(handles) + [target_eq]

    objective = cp.sum_squares(r_c @ y)
    if ridge > 0:
        objective = objective + ridge * cs.i_safe**2 * cp.sum_squares(y)

    prob = cp.Problem(cp.Minimize(objective), constraints)
    status, wall, iters = _run(prob)
    if status in (STATUS_INFEASIBLE, STATUS_NUMERICAL_ERROR) or y.value is None:
        return _failure(n, status, wall, iters, ["no usable primal point"])

    i = _polished_currents(y, cs)
    montage = Montage(currents=i)
    residuals = _base_residuals(i, cs)
    residuals["target"] = float(np.abs(ts.a_f @ i - ts.e_des).max(initial=0.0))

    obj = float(np.sum((ts.a_c @ i) ** 2))
    if ridge > 0:
        obj += ridge * float(i @ i)
    cert = _certificate(handles, cs, n, beta=np.asarray(target_eq.dual_value))
    report = SolveReport(
        status=status,
        objective=obj,
        primal_residuals=residuals,
        kkt=cert,
        iterations=iters,
        wall_time_s=wall,
        notes=["mean-subtracted to exact zero sum"],
    )
    return montage, report


def solve_cdm(
    ts: TargetSpec, cs: ConstraintSet, alpha: float, ridge: float = 0.0
) -> tuple[Montage, SolveReport]:
    """Maximize summed target intensity inside an off-target energy ball.

    ``alpha`` is the energy budget and must be strictly positive: at
    zero the feasible set collapses to the origin and the program is
    vacuous.
    """
    if alpha <= 0:
        raise ValueError("alpha must be strictly positive")
    n = ts.n_electrodes
    r_c = _qr_rows(ts.a_c) * cs.i_safe
    a_sum = ts.a_f.sum(axis=0) * cs.i_safe

    y = cp.Variable(n)
    handles = _shared_constraints(y, cs)
    # second-order-cone form of the energy ball; better conditioned than
    # the squared version, dual maps back via lam = eta / (2 sqrt(alpha))
    sqrt_alpha = float(np.sqrt(alpha))
    quad = cp.norm2(r_c @ y) <= sqrt_alpha
    constraints = _constraint_list(handles) + [quad]

    gain = a_sum @ y
    if ridge > 0:
        gain = gain - ridge * cs.i_safe**2 * cp.sum_squares(y)
    prob = cp.Problem(cp.Maximize(gain), constraints)
    status, wall, iters = _run(prob)
    if status in (STATUS_INFEASIBLE, STATUS_NUMERICAL_ERROR) or y.value is None:
        return _failure(n, status, wall, iters, ["no usable primal point"])

    i = _polished_currents(y, cs)
    montage = Montage(currents=i)
    residuals = _base_residuals(i, cs)
    energy = float(np.sum((ts.a_c @ i) ** 2))
    residuals["quad_excess"] = max(0.0, energy - alpha)

    eta = float(np.atleast_1d(_dual(quad))[0])
    cert = _certificate(handles, cs, n, lam=eta / (2.0 * sqrt_alpha))
    report = SolveReport(
        status=status,
        objective=float(ts.a_f.sum(axis=0) @ i),
        primal_residuals=residuals,
        kkt=cert,
        iterations=iters,
        wall_time_s=wall,
        notes=["mean-subtracted to exact zero sum"],
    )
    return montage, report


def solve_directional_max(
    ts: TargetSpec, cs: ConstraintSet
) -> tuple[Montage, SolveReport]:
    """Maximize summed target intensity with no off-target bound (LP)."""
    n = ts.n_electrodes
    a_sum = ts.a_f.sum(axis=0) * cs.i_safe

    y = cp.Variable(n)
    handles = _shared_constraints(y, cs)
    prob = cp.Problem(cp.Maximize(a_sum @ y), _constraint_list(handles))
    status, wall, iters = _run(prob)
    if status in (STATUS_INFEASIBLE, STATUS_NUMERICAL_ERROR) or y.value is None:
        return _failure(n, status, wall, iters, ["no usable primal point"])

    i = _polished_currents(y, cs)
    cert = _certificate(handles, cs, n)
    report = SolveReport(
        status=status,
        objective=float(ts.a_f.sum(axis=0) @ i),
        primal_residuals=_base_residuals(i, cs),
        kkt=cert,
        iterations=iters,
        wall_time_s=wall,
        notes=["mean-subtracted to exact zero sum"],
    )
    return Montage(currents=i), report


def compute_alpha_max_emax(
    ts: TargetSpec, cs: ConstraintSet
) -> tuple[float, FloatArray, Montage]:
    """Minimum-energy point among the directional maximizers.

    Stage 1 finds the best attainable summed intensity omega; stage 2
    minimizes off-target energy subject to keeping (1 - 1e-8) * omega.
    Returns (alpha_max, per-row intensities of the stage-2 montage, the
    montage itself).
    """
    n = ts.n_electrodes
    stage1_montage, stage1 = solve_directional_max(ts, cs)
    if stage1.status != STATUS_OPTIMAL:
        raise RuntimeError(f"stage-1 directional max failed: {stage1.status}")
    omega = stage1.objective

    r_c = _qr_rows(ts.a_c) * cs.i_safe
    a_sum = ts.a_f.sum(axis=0) * cs.i_safe
    y = cp.Variable(n)
    handles = _shared_constraints(y, cs)
    keep = a_sum @ y >= (1.0 - STAGE2_SLACK) * omega
    prob = cp.Problem(
        cp.Minimize(cp.sum_squares(r_c @ y)), _constraint_list(handles) + [keep]
    )
    status, _, _ = _run(prob)
    if status != STATUS_OPTIMAL or y.value is None:
        # stage-1 point is feasible for stage 2; fall back to it
        i = stage1_montage.currents
    else:
        i = _polished_currents(y, cs)
    alpha_max = float(np.sum((ts.a_c @ i) ** 2))
    e_max = np.atleast_1d(ts.a_f @ i).astype(np.float64)
    return alpha_max, e_max, Montage(currents=i)


def solve_hinge(
    ts: TargetSpec, cs: ConstraintSet, hp: HingeParams
) -> tuple[Montage, SolveReport]:
    """Banded penalty design: target equality + powered one-sided losses.

    Off-target components pay gamma * max(0, e - tol_plus)^p +
    gamma * max(0, -e - tol_minus)^p; inside [-tol_minus, tol_plus] the
    field is free.  Weights multiply the powered losses linearly, which
    makes p=2 with zero bands coincide with the weighted quadratic
    program of solve_lcmv_e.
    """
    if ts.t_c is None:
        raise ValueError("hinge program needs per-component off-target rows (t_c)")
    n = ts.n_electrodes
    m3 = ts.t_c.shape[0]
    tol_plus = hp.bands.stacked_plus()
    tol_minus = hp.bands.stacked_minus()
    if tol_plus.shape[0] != m3:
        raise ValueError(
            f"bands sized for {tol_plus.shape[0] // 3} voxels, rows give {m3 // 3}"
        )
    gamma = ts.gamma_c if ts.gamma_c is not None else np.ones(m3 // 3)
    w = np.repeat(gamma[None, :], 3, axis=0).reshape(-1)

    tc_s = ts.t_c * cs.i_safe
    af_s = ts.a_f * cs.i_safe

    y = cp.Variable(n)
    handles = _shared_constraints(y, cs, one_sided=hp.one_sided)
    target_eq = af_s @ y == ts.e_des
    constraints = _constraint_list(handles) + [target_eq]

    e_c = tc_s @ y
    over = cp.pos(e_c - tol_plus)
    under = cp.pos(-e_c - tol_minus)
    if hp.p == 1:
        loss = w @ over + w @ under
    else:
        loss = w @ cp.power(over, hp.p) + w @ cp.power(under, hp.p)
    objective = loss
    if hp.ridge > 0:
        objective = objective + hp.ridge * cs.i_safe**2 * cp.sum_squares(y)

    prob = cp.Problem(cp.Minimize(objective), constraints)
    status, wall, iters = _run(prob)
    if status in (STATUS_INFEASIBLE, STATUS_NUMERICAL_ERROR) or y.value is None:
        return _failure(n, status, wall, iters, ["no usable primal point"])

    i = _polished_currents(y, cs)
    residuals = _base_residuals(i, cs)
    residuals["target"] = float(np.abs(ts.a_f @ i - ts.e_des).max(initial=0.0))

    e_val = ts.t_c @ i
    over_v = np.maximum(0.0, e_val - tol_plus)
    under_v = np.maximum(0.0, -e_val - tol_minus)
    obj = float(w @ over_v**hp.p + w @ under_v**hp.p)
    if hp.ridge > 0:
        obj += hp.ridge * float(i @ i)

    cert = _certificate(handles, cs, n, beta=np.asarray(target_eq.dual_value))
    report = SolveReport(
        status=status,
        objective=obj,
        primal_residuals=residuals,
        kkt=cert,
        iterations=iters,
        wall_time_s=wall,
        notes=[f"penalty power p={hp.p}", "mean-subtracted to exact zero sum"],
    )
    return Montage(currents=i), report


def psi_relax(w: FloatArray, eps: float) -> FloatArray:
    """Elementwise max(eps, |w|) — the relaxed magnitude of the l1 program."""
    if eps <= 0:
        raise ValueError("eps must be strictly positive")
    return np.maximum(eps, np.abs(w))


def solve_l1l1(
    ts: TargetSpec, cs: ConstraintSet, lp: L1L1Params
) -> tuple[Montage, SolveReport]:
    """Fully l1 design: soft target fit + relaxed off-target magnitudes.

    minimize ||T_f I - E_des||_1 + sum max(eps, |T_c I| / nu)
             + alpha_reg * zeta * ||I||_1   (+ ridge ||I||_2^2)

    with nu = ||E_des||_inf and zeta the induced l1 norm of T_f; only
    the zero-sum and per-electrode bounds constrain the program (the
    budget enters through the regularizer).  The default electrode
    bound is symmetric; ``one_sided`` restores the upper-only variant.
    """
    if ts.t_f is None or ts.t_c is None or ts.e_des_field is None:
        raise ValueError("l1 program needs t_f, t_c and e_des_field")
    n = ts.n_electrodes
    nu = float(np.abs(ts.e_des_field).max(initial=0.0))
    if nu <= 0:
        raise ValueError("desired field must be nonzero")
    zeta = float(np.abs(ts.t_f).sum(axis=0).max(initial=0.0))

    tf_s = ts.t_f * cs.i_safe
    tc_s = ts.t_c * cs.i_safe

    y = cp.Variable(n)
    handles = _shared_constraints(y, cs, one_sided=lp.one_sided)
    handles["l1"] = None  # budget is soft here — no hard l1 constraint

    fit = cp.norm1(tf_s @ y - ts.e_des_field)
    relaxed = cp.sum(cp.maximum(lp.eps, cp.abs(tc_s @ y) / nu))
    budget = lp.alpha_reg * zeta * cs.i_safe * cp.norm1(y)
    objective = fit + relaxed + budget
    if lp.ridge > 0:
        objective = objective + lp.ridge * cs.i_safe**2 * cp.sum_squares(y)

    prob = cp.Problem(cp.Minimize(objective), _constraint_list(handles))
    status, wall, iters = _run(prob)
    if status in (STATUS_INFEASIBLE, STATUS_NUMERICAL_ERROR) or y.value is None:
        return _failure(n, status, wall, iters, ["no usable primal point"])

    i = _polished_currents(y, cs)
    residuals = {
        "zero_sum": abs(float(i.sum())),
        "linf_excess": max(0.0, float(np.abs(i).max(initial=0.0)) - cs.i_safe),
    }
    obj = (
        float(np.abs(ts.t_f @ i - ts.e_des_field).sum())
        + float(psi_relax(ts.t_c @ i / nu, lp.eps).sum())
        + lp.alpha_reg * zeta * float(np.abs(i).sum())
    )
    if lp.ridge > 0:
        obj += lp.ridge * float(i @ i)

    cert = _certificate(handles, cs, n)
    report = SolveReport(
        status=status,
        objective=obj,
        primal_residuals=residuals,
        kkt=cert,
        iterations=iters,
        wall_time_s=wall,
        notes=[
            f"nu={nu:.6g}, zeta={zeta:.6g}",
            "one-sided bound" if lp.one_sided else "symmetric bound",
            "mean-subtracted to exact zero sum",
        ],
    )
    return Montage(currents=i), report


def solve_magmax_biconvex(
    ts: TargetSpec,
    cs: ConstraintSet,
    alpha: float,
    max_iters: int = 50,
    tol: float = 1e-7,
) -> tuple[BiconvexState, SolveReport]:
    """Alternating magnitude maximization over target voxels.

    Rounds alternate a fixed-direction directional solve (a CDM
    instance) with the closed-form direction update d_i towards the
    achieved field.  The recorded objective is the true summed field
    magnitude; the trace must be non-decreasing up to solver noise, and
    a decrease beyond that tolerance aborts with numerical-error.
    """
    if alpha <= 0:
        raise ValueError("alpha must be strictly positive")
    if ts.t_f is None:
        raise ValueError("magnitude program needs per-component target rows (t_f)")
    n = ts.n_electrodes
    n_f = ts.t_f.shape[0] // 3
    blocks = ts.t_f.reshape(3, n_f, n)

    if ts.directions is not None:
        d = ts.directions.copy()
    else:
        d = np.tile(np.array([0.0, 0.0, 1.0]), (n_f, 1))

    def magnitude_objective(i: FloatArray) -> float:
        fields = np.einsum("ain,n->ia", blocks, i)
        return float(np.linalg.norm(fields, axis=1).sum())

    trace: list[float] = []
    montage = Montage(currents=np.zeros(n))
    last_report: SolveReport | None = None
    total_wall = 0.0
    decrease_tol = 1e-6

    rounds = 0
    converged = False
    for rounds in range(1, max_iters + 1):
        a_row = np.einsum("ia,ain->n", d, blocks)[None, :]
        sub_ts = TargetSpec(
            a_f=a_row, e_des=np.zeros(1), a_c=ts.a_c, gamma_c=ts.gamma_c
        )
        montage, last_report = solve_cdm(sub_ts, cs, alpha)
        total_wall += last_report.wall_time_s
        if last_report.status != STATUS_OPTIMAL:
            report = SolveReport(
                status=last_report.status,
                objective=float("nan"),
                primal_residuals=last_report.primal_residuals,
                kkt=None,
                iterations=rounds,
                wall_time_s=total_wall,
                notes=[f"inner directional solve failed at round {rounds}"],
            )
            state = BiconvexState(d, montage, np.asarray(trace), rounds)
            return state, report

        i = montage.currents
        fields = np.einsum("ain,n->ia", blocks, i)
        norms = np.linalg.norm(fields, axis=1)
        live = norms > 0
        d[live] = fields[live] / norms[live, None]

        obj = magnitude_objective(i)
        if trace:
            gain = obj - trace[-1]
            scale = max(1.0, abs(trace[-1]))
            if gain < -decrease_tol * scale:
                trace.append(obj)
                report = SolveReport(
                    status=STATUS_NUMERICAL_ERROR,
                    objective=obj,
                    primal_residuals=last_report.primal_residuals,
                    kkt=None,
                    iterations=rounds,
                    wall_time_s=total_wall,
                    notes=[f"objective decreased by {-gain:.3e} at round {rounds}"],
                )
                state = BiconvexState(d, montage, np.asarray(trace), rounds)
                return state, report
            trace.append(obj)
            if gain < tol * scale:
                converged = True
                break
        else:
            trace.append(obj)

    status = STATUS_OPTIMAL if converged else STATUS_MAX_ITER
    report = SolveReport(
        status=status,
        objective=trace[-1],
        primal_residuals=last_report.primal_residuals if last_report else {},
        kkt=last_report.kkt if last_report else None,
        iterations=rounds,
        wall_time_s=total_wall,
        notes=[f"{rounds} alternating rounds"],
    )
    state = BiconvexState(d, montage, np.asarray(trace), rounds)
    return state, report


def kkt_residuals(
    ts: TargetSpec,
    cs: ConstraintSet,
    montage: Montage,
    cert: KktCertificate | None,
    kind: str = "lcmv",
    alpha: float | None = None,
    ridge: float = 0.0,
) -> dict[str, float]:
    """First-order optimality residuals in natural units.

    Stationarity handles the l1 term's subdifferential by picking, on
    each zero-current electrode, the subgradient value in [-1, 1] that
    best cancels the remaining gradient — so the reported residual is
    the distance from 0 to the full subdifferential set.  The l1
    constraint's exponential family of linear multipliers is summarized
    by its single epigraph dual.

    Duals are evaluated exactly as given: at degenerate vertices (box
    and budget active together, common in the pure directional LP) the
    solver may return a dual split that is feasible and complementary
    yet not stationarity-exact, and the residual reports that honestly
    rather than re-fitting the certificate.
    """
    if cert is None:
        raise ValueError("missing duals: solver did not produce a certificate")
    if kind not in ("lcmv", "cdm", "dirmax"):
        raise ValueError(f"unsupported problem kind {kind!r}")
    i = montage.currents
    n = i.shape[0]

    if kind == "lcmv":
        grad_obj = 2.0 * ts.a_c.T @ (ts.a_c @ i) + 2.0 * ridge * i
    elif kind == "cdm":
        if alpha is None:
            raise ValueError("cdm residuals need the energy budget alpha")
        grad_obj = -ts.a_f.sum(axis=0) + cert.lam * 2.0 * ts.a_c.T @ (ts.a_c @ i)
    else:
        grad_obj = -ts.a_f.sum(axis=0)

    grad = grad_obj + cert.mu * np.ones(n) + cert.nu - cert.kappa
    if cert.beta.size:
        grad = grad + ts.a_f.T @ cert.beta

    z_tol = 1e-9 * cs.i_safe
    sub = np.sign(i) * (np.abs(i) > z_tol)
    grad = grad + cert.delta * sub
    free = np.abs(i) <= z_tol
    if cert.delta > _DUAL_FLOOR:
        adjust = np.clip(-grad[free] / cert.delta, -1.0, 1.0)
        grad[free] = grad[free] + cert.delta * adjust

    scale = max(
        float(np.abs(grad_obj).max(initial=0.0)),
        float(np.abs(cert.beta).max(initial=0.0))
        * float(np.abs(ts.a_f).max(initial=0.0)),
        abs(cert.mu),
        float(cert.nu.max(initial=0.0)),
        float(cert.kappa.max(initial=0.0)),
        cert.delta,
    )
    if scale < 1e-12:
        stationarity = float(np.abs(grad).max(initial=0.0))
    else:
        stationarity = float(np.abs(grad).max(initial=0.0)) / scale

    out = {
        "stationarity": stationarity,
        "zero_sum": abs(float(i.sum())) / cs.i_safe,
        "linf": max(0.0, float(np.abs(i).max(initial=0.0)) / cs.i_safe - 1.0),
        "l1": max(0.0, float(np.abs(i).sum()) / cs.l1_bound - 1.0),
    }
    if kind == "lcmv":
        err = float(np.abs(ts.a_f @ i - ts.e_des).max(initial=0.0))
        out["target"] = err / (1.0 + float(np.abs(ts.e_des).max(initial=0.0)))
    energy = float(np.sum((ts.a_c @ i) ** 2))
    if kind == "cdm" and alpha is not None:
        out["quad"] = max(0.0, (energy - alpha) / max(alpha, 1e-30))

    comp_scale = max(scale, 1e-30) * cs.i_safe
    comp = max(
        float(np.abs(cert.nu * (i - cs.i_safe)).max(initial=0.0)),
        float(np.abs(cert.kappa * (-i - cs.i_safe)).max(initial=0.0)),
        abs(cert.delta * (np.abs(i).sum() - cs.l1_bound)),
    )
    if kind == "cdm" and alpha is not None:
        comp = max(comp, abs(cert.lam * (energy - alpha)) / max(cs.i_safe, 1.0))
    out["complementarity"] = comp / comp_scale

    out["dual_feasibility"] = max(
        0.0,
        -float(cert.nu.min(initial=0.0)),
        -float(cert.kappa.min(initial=0.0)),
        -cert.delta,
        -cert.lam,
    ) / max(scale, 1e-30)
    return out
