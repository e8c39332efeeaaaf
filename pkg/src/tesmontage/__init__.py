"""Electrode montage design for transcranial electrical stimulation.

The package designs per-electrode current patterns ("montages") that
shape the induced electric field on an analytical spherical head model:
maximize intensity along a preferred direction, hold a desired intensity
while minimizing off-target energy, or penalize only field components
exceeding per-axis tolerance bands.  All programs share the hardware
constraints (zero net current, per-electrode and total current budgets)
and are solved as conic programs with verifiable optimality
certificates.

Layout
------
``model``
    Frozen problem-data types and invariant checks.
``sphere``
    Multi-shell spherical forward model and electrode grid.
``regions``
    Target/off-target voxel sets and the matrices the solvers consume.
``optimize``
    The convex programs and the KKT residual harness.
``equivalence``
    Cross-program reduction maps and their sweep protocols.
``metrics``
    Focality metrics and the tolerance-band search.
``studies``
    Focality and subsampling study grids on the testbed.
``fileio`` / ``cli``
    Portable file formats and the command-line surface.
"""

from __future__ import annotations

from .equivalence import (
    L1L1SweepConfig,
    SweepTable,
    Theorem1Config,
    cdm_alpha_from_lcmv,
    hp_params_from_l1l1,
    lcmv_edes_from_cdm,
    montage_rel_diff,
    run_l1l1_sweep,
    run_theorem1_sweep,
)
from .fileio import (
    FormatError,
    read_csv,
    read_forward_model,
    read_montage,
    read_regions,
    write_csv,
    write_forward_model,
    write_montage,
    write_regions,
)
from .metrics import (
    DEFAULT_ACTIVATION_THRESHOLD,
    DEFAULT_PREFERRED_DIRECTION,
    P1_TOLERANCE_GRID,
    P23_TOLERANCE_GRID,
    activation_map,
    jaccard,
    relative_decrease,
    tolerance_search,
    v_th,
)
from .model import (
    STATUS_INFEASIBLE,
    STATUS_MAX_ITER,
    STATUS_NUMERICAL_ERROR,
    STATUS_OPTIMAL,
    ConstraintSet,
    ForwardModel,
    KktCertificate,
    Montage,
    RegionSpec,
    SolveReport,
    TargetSpec,
    ToleranceBands,
    montage_bound_violations,
    validate_problem,
)
from .optimize import (
    BiconvexState,
    HingeParams,
    L1L1Params,
    compute_alpha_max_emax,
    kkt_residuals,
    psi_relax,
    solve_cdm,
    solve_directional_max,
    solve_hinge,
    solve_l1l1,
    solve_lcmv_e,
    solve_magmax_biconvex,
)
from .regions import (
    annulus_offtarget,
    build_region_spec,
    build_target_spec,
    disc_target,
    subsample_offtarget,
)
from .sphere import (
    ElectrodeGrid,
    SeriesConvergenceError,
    SphereModel,
    assemble_forward_matrix,
    efield_at,
    potential_at,
    radial_project,
    spherical_to_cartesian,
)
from .studies import (
    FocalityConfig,
    StudyProblem,
    SubsampleConfig,
    build_problem,
    run_focality_study,
    run_subsample_study,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # model
    "ConstraintSet",
    "ForwardModel",
    "KktCertificate",
    "Montage",
    "RegionSpec",
    "SolveReport",
    "TargetSpec",
    "ToleranceBands",
    "STATUS_INFEASIBLE",
    "STATUS_MAX_ITER",
    "STATUS_NUMERICAL_ERROR",
    "STATUS_OPTIMAL",
    "montage_bound_violations",
    "validate_problem",
    # sphere
    "ElectrodeGrid",
    "SeriesConvergenceError",
    "SphereModel",
    "assemble_forward_matrix",
    "efield_at",
    "potential_at",
    "radial_project",
    "spherical_to_cartesian",
    # regions
    "annulus_offtarget",
    "build_region_spec",
    "build_target_spec",
    "disc_target",
    "subsample_offtarget",
    # optimize
    "BiconvexState",
    "HingeParams",
    "L1L1Params",
    "compute_alpha_max_emax",
    "kkt_residuals",
    "psi_relax",
    "solve_cdm",
    "solve_directional_max",
    "solve_hinge",
    "solve_l1l1",
    "solve_lcmv_e",
    "solve_magmax_biconvex",
    # equivalence
    "L1L1SweepConfig",
    "SweepTable",
    "Theorem1Config",
    "cdm_alpha_from_lcmv",
    "hp_params_from_l1l1",
    "lcmv_edes_from_cdm",
    "montage_rel_diff",
    "run_l1l1_sweep",
    "run_theorem1_sweep",
    # metrics
    "DEFAULT_ACTIVATION_THRESHOLD",
    "DEFAULT_PREFERRED_DIRECTION",
    "P1_TOLERANCE_GRID",
    "P23_TOLERANCE_GRID",
    "activation_map",
    "jaccard",
    "relative_decrease",
    "tolerance_search",
    "v_th",
    # studies
    "FocalityConfig",
    "StudyProblem",
    "SubsampleConfig",
    "build_problem",
    "run_focality_study",
    "run_subsample_study",
    # fileio
    "FormatError",
    "read_csv",
    "read_forward_model",
    "read_montage",
    "read_regions",
    "write_csv",
    "write_forward_model",
    "write_montage",
    "write_regions",
]
