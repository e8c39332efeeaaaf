"""Analytical quasi-static forward model on a four-shell spherical head.

A scalp electrode is modeled as a point current source on the outer
sphere.  Inside each shell the potential is a Legendre series

    phi(r, theta) = sum_l  [A_l (r/R)^l + B_l (r/R)^(-l-1)] P_l(cos theta)

with R the scalp radius; the per-shell coefficients follow from a 2x2
transfer recursion over the interface conditions (continuity of the
potential and of the radial current density), regularity at the origin,
and the injected current density at the scalp.  Only zero-sum electrode
configurations are physical, so every public evaluation works with
source/sink pairs or zero-sum montages; the l = 0 term cancels and is
never computed.

The electric field is the term-wise negative gradient of the same
series.  Legendre values and derivatives are generated by the standard
upward recursions, so no special-function library is required.

Currents are mA, potentials volts, fields V/m, geometry meters.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .model import FloatArray, ForwardModel, Montage, stack_component_blocks

#: Default outer radii of the brain/CSF/skull/scalp shells (meters):
#: head radius 9.2 cm minus 6 mm scalp, 5 mm skull, 1 mm CSF.
DEFAULT_RADII = (0.080, 0.081, 0.086, 0.092)
#: Default conductivities (S/m), inner to outer: brain, CSF, skull, scalp.
DEFAULT_CONDUCTIVITIES = (0.30, 1.79, 0.006, 0.33)
DEFAULT_SERIES_ORDER = 200
#: Relative tail-estimate threshold for declaring the series converged.
SERIES_TAIL_RTOL = 1e-10

_MA_TO_A = 1e-3

# Coefficient cache keyed by (radii, conductivities, order).
_COEFF_CACHE: dict[tuple, FloatArray] = {}


class SeriesConvergenceError(ArithmeticError):
    """Raised when the Legendre-series tail estimate exceeds tolerance."""


@dataclass(frozen=True, eq=False)
class ElectrodeGrid:
    """Scalp electrode layout.

    The default layout is a circular patch centered on the north pole:
    a 5 x 5 square grid with 20 mm geodesic spacing whose four extreme
    corners are dropped, leaving 21 positions.  Disc radius is metadata
    only; electrodes are treated as point sources.
    """

    positions: FloatArray
    labels: tuple[str, ...]
    disc_radius: float = 0.005
    center_index: int = 0

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError("positions must be N x 3")
        if len(self.labels) != pos.shape[0]:
            raise ValueError("one label per electrode required")
        radii = np.linalg.norm(pos, axis=1)
        if np.max(np.abs(radii - radii[0])) > 1e-9 * radii[0]:
            raise ValueError("electrode positions must lie on one sphere")
        # pairwise distinct
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        np.fill_diagonal(dist, np.inf)
        if np.min(dist) < 1e-9:
            raise ValueError("electrode positions must be pairwise distinct")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "labels", tuple(self.labels))
        pos.setflags(write=False)

    @property
    def n_electrodes(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def default_patch(
        cls,
        scalp_radius: float = DEFAULT_RADII[3],
        spacing: float = 0.020,
        disc_radius: float = 0.005,
    ) -> "ElectrodeGrid":
        """21-electrode circular patch at the north pole, 20 mm spacing."""
        pts = []
        for i in range(-2, 3):
            for j in range(-2, 3):
                if abs(i) == 2 and abs(j) == 2:
                    continue  # drop corners -> circular patch of 21
                pts.append((i * spacing, j * spacing))
        positions = np.array(
            [_tangent_to_sphere(x, y, scalp_radius) for x, y in pts], dtype=np.float64
        )
        labels = tuple(f"E{k:02d}" for k in range(len(pts)))
        center = pts.index((0.0, 0.0))
        return cls(
            positions=positions,
            labels=labels,
            disc_radius=disc_radius,
            center_index=center,
        )


def _tangent_to_sphere(x: float, y: float, radius: float) -> NDArray[np.float64]:
    """Map tangent-plane coordinates at the north pole onto the sphere.

    The planar distance from the origin becomes the geodesic (arc)
    distance on the sphere; the azimuth is preserved.
    """
    rho = float(np.hypot(x, y))
    theta = rho / radius
    phi = float(np.arctan2(y, x)) if rho > 0 else 0.0
    return radius * np.array(
        [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)]
    )


def spherical_to_cartesian(r: float, theta: float, phi: float) -> NDArray[np.float64]:
    """Convert [radius, polar angle, azimuth] (radians) to Cartesian meters."""
    return np.array(
        [
            r * np.sin(theta) * np.cos(phi),
            r * np.sin(theta) * np.sin(phi),
            r * np.cos(theta),
        ]
    )


@dataclass(frozen=True, eq=False)
class SphereModel:
    """Four-shell concentric spherical head model.

    Parameters
    ----------
    radii : 4-tuple, meters
        Outer radii of brain, CSF, skull, scalp; strictly increasing.
    conductivities : 4-tuple, S/m
        Same order (brain, CSF, skull, scalp); strictly positive.
    series_order : int
        Legendre truncation order L; the tail is bounded geometrically
        and evaluation fails loudly if the estimate exceeds
        ``SERIES_TAIL_RTOL`` of the accumulated magnitude.
    electrode_positions : (N, 3) array or None
        Electrode sites on the scalp sphere (required by ``potential_at``
        and ``efield_at``).
    """

    radii: tuple[float, float, float, float] = DEFAULT_RADII
    conductivities: tuple[float, float, float, float] = DEFAULT_CONDUCTIVITIES
    series_order: int = DEFAULT_SERIES_ORDER
    electrode_positions: FloatArray | None = None

    def __post_init__(self) -> None:
        radii = tuple(float(r) for r in self.radii)
        sigma = tuple(float(s) for s in self.conductivities)
        if len(radii) != 4 or len(sigma) != 4:
            raise ValueError("exactly four shells are modeled")
        if not all(r2 > r1 for r1, r2 in zip(radii, radii[1:])):
            raise ValueError("shell radii must be strictly increasing")
        if min(sigma) <= 0:
            raise ValueError("conductivities must be strictly positive")
        if self.series_order < 1:
            raise ValueError("series_order must be >= 1")
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "conductivities", sigma)
        if self.electrode_positions is not None:
            pos = np.asarray(self.electrode_positions, dtype=np.float64)
            r_scalp = radii[3]
            if pos.ndim != 2 or pos.shape[1] != 3:
                raise ValueError("electrode_positions must be N x 3")
            if np.max(np.abs(np.linalg.norm(pos, axis=1) - r_scalp)) > 1e-9 * r_scalp:
                raise ValueError("electrodes must sit on the scalp radius")
            object.__setattr__(self, "electrode_positions", pos)
            pos.setflags(write=False)

    @property
    def brain_radius(self) -> float:
        return self.radii[0]

    @property
    def scalp_radius(self) -> float:
        return self.radii[3]

    @property
    def n_electrodes(self) -> int:
        if self.electrode_positions is None:
            return 0
        return self.electrode_positions.shape[0]

    @classmethod
    def default(cls) -> "SphereModel":
        """Default shells with the 21-electrode patch attached."""
        grid = ElectrodeGrid.default_patch()
        return cls(electrode_positions=grid.positions)

    def with_electrodes(self, grid: ElectrodeGrid) -> "SphereModel":
        return replace(self, electrode_positions=grid.positions)


def _brain_coefficients(model: SphereModel) -> FloatArray:
    """Brain-shell series coefficients c_l for a 1 mA scalp point source.

    The interior potential of a single source at scalp position ``a`` is
    ``sum_{l>=1} c_l (r/R)^l P_l(cos angle(point, a))`` volts (R = scalp
    radius).  Coefficients are obtained by propagating (A, B) = (1, 0)
    outward through the three interfaces with the 2x2 boundary-condition
    solve, then normalizing via the injected current density at the scalp.
    """
    key = (model.radii, model.conductivities, model.series_order)
    cached = _COEFF_CACHE.get(key)
    if cached is not None:
        return cached
    r4 = model.scalp_radius
    x_if = np.array([r / r4 for r in model.radii[:3]])  # normalized interface radii
    sigma = model.conductivities
    order = model.series_order
    ell = np.arange(1, order + 1, dtype=np.float64)

    a = np.ones_like(ell)
    b = np.zeros_like(ell)
    for i in range(3):
        x = x_if[i]
        s_in, s_out = sigma[i], sigma[i + 1]
        xl = x**ell
        c1 = a * xl + b / (xl * x)  # A x^l + B x^-(l+1)
        c2 = s_in * (ell * a * xl / x - (ell + 1.0) * b / (xl * x * x))
        denom = s_out * (2.0 * ell + 1.0)
        a = (s_out * (ell + 1.0) * c1 / xl + c2 * x / xl) / denom
        b = (s_out * ell * c1 * xl * x - c2 * xl * x * x) / denom

    # Neumann condition at the scalp surface for the (2l+1)/(4 pi R^2)
    # expansion of a unit point current density.
    current = _MA_TO_A
    flux = sigma[3] * (ell * a - (ell + 1.0) * b) / r4
    coeff = current * (2.0 * ell + 1.0) / (4.0 * np.pi * r4 * r4 * flux)
    coeff = np.ascontiguousarray(coeff)
    coeff.setflags(write=False)
    _COEFF_CACHE[key] = coeff
    return coeff


def _check_points_inside(model: SphereModel, points: FloatArray) -> FloatArray:
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[1] != 3:
        raise ValueError("points must be K x 3")
    r = np.linalg.norm(pts, axis=1)
    if np.any(r >= model.brain_radius):
        raise ValueError(
            "evaluation points must lie strictly inside the brain shell "
            f"(radius {model.brain_radius} m)"
        )
    return pts


def _series_tables(
    model: SphereModel, points: FloatArray, electrodes: FloatArray, need_gradient: bool
) -> tuple[FloatArray, FloatArray | None, FloatArray | None, FloatArray, FloatArray]:
    """Accumulate the Legendre sums for all (point, electrode) pairs.

    Returns ``(s_pot, s_rad, s_tan, u, r)`` where ``s_pot[k, e]`` is the
    potential sum, ``s_rad``/``s_tan`` the radial and tangential gradient
    sums (None when not requested), ``u`` the cosine between point k and
    electrode e, and ``r`` the point radii.  Raises
    :class:`SeriesConvergenceError` when the geometric tail estimate at
    truncation order exceeds ``SERIES_TAIL_RTOL`` of the accumulated
    magnitude.
    """
    coeff = _brain_coefficients(model)
    order = model.series_order
    r4 = model.scalp_radius
    r = np.linalg.norm(points, axis=1)
    x = r / r4
    with np.errstate(invalid="ignore"):
        rhat = np.where(r[:, None] > 0, points / np.where(r == 0, 1.0, r)[:, None], 0.0)
    ahat = electrodes / np.linalg.norm(electrodes, axis=1)[:, None]
    u = np.clip(rhat @ ahat.T, -1.0, 1.0)  # (K, E)

    k, e = u.shape
    s_pot = np.zeros((k, e))
    s_rad = np.zeros((k, e)) if need_gradient else None
    s_tan = np.zeros((k, e)) if need_gradient else None
    abs_pot = np.zeros(k)
    abs_grad = np.zeros(k)

    p_prev = np.ones_like(u)  # P_0
    p_curr = u.copy()  # P_1
    dp_prev = np.zeros_like(u)  # P_0'
    dp_curr = np.ones_like(u)  # P_1'
    xl = x.copy()  # x^1
    for li in range(1, order + 1):
        cl = coeff[li - 1]
        w = cl * xl  # (K,)
        s_pot += w[:, None] * p_curr
        if need_gradient:
            s_rad += (w * li)[:, None] * p_curr
            s_tan += w[:, None] * dp_curr
        aw = np.abs(w)
        abs_pot += aw
        abs_grad += aw * li
        if li < order:
            p_next = ((2 * li + 1) * u * p_curr - li * p_prev) / (li + 1)
            dp_next = dp_prev + (2 * li + 1) * p_curr
            p_prev, p_curr = p_curr, p_next
            dp_prev, dp_curr = dp_curr, dp_next
            xl = xl * x

    # Geometric tail bounds: |P_l| <= 1 and the coefficients approach a
    # constant multiple of (2l+1)/l, so successive terms shrink by ~x.
    geo = x / (1.0 - x)
    last = np.abs(coeff[order - 1]) * xl
    tail_pot = last * geo
    tail_grad = last * (order * geo + geo / (1.0 - x))
    scale_pot = np.maximum(abs_pot, 1e-300)
    scale_grad = np.maximum(abs_grad, 1e-300)
    worst = float(np.max(tail_pot / scale_pot))
    if need_gradient:
        worst = max(worst, float(np.max(tail_grad / scale_grad)))
    if worst > SERIES_TAIL_RTOL:
        raise SeriesConvergenceError(
            f"series tail estimate {worst:.3e} exceeds {SERIES_TAIL_RTOL:.0e} "
            f"at order {order}; increase series_order or move points inward"
        )
    return s_pot, s_rad, s_tan, u, r


def potential_at(
    model: SphereModel, source: int, sink: int, point: Sequence[float]
) -> float:
    """Potential (volts) at ``point`` for a +1/-1 mA source/sink pair.

    ``source`` and ``sink`` index ``model.electrode_positions`` and must
    differ (a coincident pair injects nothing and is rejected).  The
    returned value is the quasi-static Laplace solution, harmonic inside
    every shell, per mA of pair current.
    """
    if model.electrode_positions is None:
        raise ValueError("model carries no electrode positions")
    n = model.n_electrodes
    if not (0 <= source < n and 0 <= sink < n):
        raise IndexError("electrode index out of range")
    if source == sink:
        raise ValueError("source and sink must be distinct electrodes")
    pts = _check_points_inside(model, np.asarray(point, dtype=np.float64))
    electrodes = model.electrode_positions[[source, sink], :]
    s_pot, _, _, _, _ = _series_tables(model, pts, electrodes, need_gradient=False)
    return float(s_pot[0, 0] - s_pot[0, 1])


def _electrode_field_tensor(
    model: SphereModel, points: FloatArray, electrodes: FloatArray
) -> FloatArray:
    """Electric field of a lone unit (1 mA) source per electrode.

    Shape (K, E, 3).  Individually these are the l >= 1 series of a
    single point source; they are only physical in zero-sum combinations,
    where the omitted monopole parts cancel exactly.
    """
    s_pot, s_rad, s_tan, u, r = _series_tables(
        model, points, electrodes, need_gradient=True
    )
    del s_pot
    k = points.shape[0]
    e = electrodes.shape[0]
    ahat = electrodes / np.linalg.norm(electrodes, axis=1)[:, None]
    fields = np.empty((k, e, 3))
    coeff = _brain_coefficients(model)
    r4 = model.scalp_radius
    origin = r == 0.0
    safe_r = np.where(origin, 1.0, r)
    rhat = points / safe_r[:, None]
    # grad phi = [S_rad * rhat + S_tan * (ahat - u rhat)] / r ; E = -grad phi
    for ei in range(e):
        tangential = ahat[ei][None, :] - u[:, ei][:, None] * rhat
        grad = (s_rad[:, ei][:, None] * rhat + s_tan[:, ei][:, None] * tangential) / safe_r[
            :, None
        ]
        fields[:, ei, :] = -grad
    if np.any(origin):
        # Only the l = 1 term contributes at the center: phi ~ c1 (a.x)/R.
        center_grad = coeff[0] / r4
        fields[origin, :, :] = -center_grad * ahat[None, :, :]
    return fields


def efield_at(
    model: SphereModel,
    montage: Montage,
    points: Sequence[Sequence[float]] | FloatArray,
    *,
    _fields: FloatArray | None = None,
) -> FloatArray:
    """Electric field vectors (V/m) of a zero-sum montage at ``points``.

    The montage must satisfy Kirchhoff's law: |sum I| <= 1e-9 * ||I||_1.
    The field is accumulated electrode by electrode in ascending index
    order, which keeps results bit-reproducible across calls.
    ``_fields`` is an internal fast path carrying a precomputed
    per-electrode field tensor; public callers leave it unset.
    """
    if model.electrode_positions is None:
        raise ValueError("model carries no electrode positions")
    currents = montage.currents
    if currents.shape[0] != model.n_electrodes:
        raise ValueError("montage length must match electrode count")
    if montage.zero_sum_residual() > 1e-9 * max(montage.l1(), 1e-300):
        raise ValueError(
            "montage violates Kirchhoff's law: net current "
            f"{np.sum(currents):.3e} mA"
        )
    pts = _check_points_inside(model, points)
    out = np.zeros((pts.shape[0], 3))
    if not np.any(currents):
        return out
    if _fields is None:
        _fields = _electrode_field_tensor(model, pts, model.electrode_positions)
    for k in range(currents.shape[0]):
        if currents[k] != 0.0:
            out += currents[k] * _fields[:, k, :]
    return out


def assemble_forward_matrix(
    model: SphereModel,
    grid: ElectrodeGrid,
    voxels: FloatArray,
    reference: int,
    voxel_volumes: FloatArray | None = None,
) -> ForwardModel:
    """Assemble the stacked (3M, N) forward matrix for a voxel set.

    Column k is the field of a unit (1 mA) current at electrode k
    returning through the ``reference`` electrode, so the reference
    column is identically zero and ``T @ I`` reproduces the field of any
    zero-sum montage regardless of the reference choice.
    """
    if not 0 <= reference < grid.n_electrodes:
        raise IndexError("reference electrode index out of range")
    mdl = model.with_electrodes(grid)
    pts = _check_points_inside(mdl, voxels)
    fields = _electrode_field_tensor(mdl, pts, grid.positions)
    n = grid.n_electrodes
    m = pts.shape[0]
    bx = np.zeros((m, n))
    by = np.zeros((m, n))
    bz = np.zeros((m, n))
    for k in range(n):
        currents = np.zeros(n)
        if k != reference:
            currents[k] = 1.0
            currents[reference] = -1.0
        column = efield_at(mdl, Montage(currents), pts, _fields=fields)
        bx[:, k] = column[:, 0]
        by[:, k] = column[:, 1]
        bz[:, k] = column[:, 2]
    volumes = (
        np.ones(m) if voxel_volumes is None else np.asarray(voxel_volumes, dtype=np.float64)
    )
    return ForwardModel(
        t=stack_component_blocks(bx, by, bz),
        voxel_coords=pts,
        voxel_volumes=volumes,
        electrode_ids=grid.labels,
        reference_note=(
            f"columns: unit current at electrode k returning at "
            f"{grid.labels[reference]} (index {reference})"
        ),
    )


def radial_project(fm: ForwardModel, directions: FloatArray) -> FloatArray:
    """Project the forward matrix onto per-voxel directions.

    Row i of the result equals ``d_i . (x_i, y_i, z_i)`` rows of ``fm.t``,
    so ``(result @ I)_i`` is the direction-projected field at voxel i.
    Directions must be unit vectors (checked to 1e-9).
    """
    dirs = np.asarray(directions, dtype=np.float64)
    if dirs.shape != (fm.n_voxels, 3):
        raise ValueError("directions must be M x 3")
    norms = np.linalg.norm(dirs, axis=1)
    if dirs.size and np.max(np.abs(norms - 1.0)) > 1e-9:
        raise ValueError("directions must be unit vectors")
    return (
        dirs[:, 0:1] * fm.component_block(0)
        + dirs[:, 1:2] * fm.component_block(1)
        + dirs[:, 2:3] * fm.component_block(2)
    )
