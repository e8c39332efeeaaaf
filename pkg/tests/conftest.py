"""Shared fixtures: tiny random solver instances and the spherical testbed."""

from __future__ import annotations

import numpy as np
import pytest

from tesmontage import (
    ConstraintSet,
    ElectrodeGrid,
    SphereModel,
    TargetSpec,
)

# Tiny-instance limits used throughout the oracle cross-checks: small
# enough that 4-electrode brute force stays cheap, large enough that the
# box / l1 constraints actually bind for the max-style programs.
TINY_I_SAFE = 1.5
TINY_MUL = 2.0


def tiny_instance(seed: int, n: int = 4, n_offtarget: int = 11):
    """Random (a_f, t_c) pair small enough for brute-force oracles.

    ``a_f`` is a single aggregated target row; ``t_c`` stacks the three
    component blocks of ``n_offtarget`` off-target voxels, scaled down so
    off-target rows do not drown the target row.
    """
    rng = np.random.default_rng(seed)
    a_f = rng.normal(size=(1, n))
    t_c = rng.normal(size=(3 * n_offtarget, n)) * 0.4
    return a_f, t_c


def tiny_target_spec(a_f, t_c, e_des) -> TargetSpec:
    """TargetSpec with identity off-target weights (a_c == t_c)."""
    return TargetSpec(
        a_f=a_f,
        e_des=np.atleast_1d(np.asarray(e_des, dtype=np.float64)),
        a_c=t_c,
        t_c=t_c,
    )


def tiny_constraints(l1_factor: float = 2.0) -> ConstraintSet:
    return ConstraintSet(i_safe=TINY_I_SAFE, i_tot_mul=TINY_MUL, l1_factor=l1_factor)


@pytest.fixture(scope="session")
def sphere_model() -> SphereModel:
    return SphereModel.default()


@pytest.fixture(scope="session")
def electrode_grid() -> ElectrodeGrid:
    return ElectrodeGrid.default_patch()
