"""Focality metrics and tolerance-band search.

The activation surrogate is deliberately simple: a voxel counts as
activated when its field projected on a fixed preferred direction
crosses a scalar threshold.  Defaults for that direction and threshold
follow the published operating point so study shapes stay comparable.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .model import FloatArray

# published operating point for the directional surrogate
_RAW_PREFERRED = np.array([-0.75, -0.41, 0.51])
DEFAULT_PREFERRED_DIRECTION = _RAW_PREFERRED / np.linalg.norm(_RAW_PREFERRED)
DEFAULT_ACTIVATION_THRESHOLD = 70.27  # V/m

# tolerance grids used by the band searches (the p=2,3 grid is quoted
# verbatim from its source, unsorted)
P1_TOLERANCE_GRID = (0.1, 0.5, 0.6, 0.7)
P23_TOLERANCE_GRID = (0.01, 0.65, 0.55, 0.35)


def v_th(
    radial_field: FloatArray,
    e_des: float,
    fraction: float = 0.8,
    volumes: FloatArray | None = None,
) -> float:
    """Total volume where the projected field exceeds fraction * e_des.

    The comparison is strict.  ``volumes`` defaults to unit volume per
    voxel, making the result a count.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    field = np.asarray(radial_field, dtype=np.float64)
    if volumes is None:
        volumes = np.ones_like(field)
    else:
        volumes = np.asarray(volumes, dtype=np.float64)
        if volumes.shape != field.shape:
            raise ValueError("volumes must match the field vector")
    return float(volumes[field > fraction * e_des].sum())


def activation_map(
    fields: FloatArray,
    preferred_dir: FloatArray = DEFAULT_PREFERRED_DIRECTION,
    threshold: float = DEFAULT_ACTIVATION_THRESHOLD,
    target_idx: Sequence[int] | None = None,
) -> tuple[np.ndarray, int]:
    """Directional-threshold activation over (M, 3) field vectors.

    Returns the boolean map over all voxels (activation means the
    projection onto ``preferred_dir`` reaches ``threshold``) and the
    count restricted to non-target voxels.
    """
    preferred = np.asarray(preferred_dir, dtype=np.float64)
    if abs(np.linalg.norm(preferred) - 1.0) > 1e-9:
        raise ValueError("preferred_dir must be a unit vector")
    f = np.asarray(fields, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != 3:
        raise ValueError("fields must be (M, 3)")
    active = f @ preferred >= threshold
    if target_idx is None:
        n_act = int(active.sum())
    else:
        mask = np.ones(f.shape[0], dtype=bool)
        mask[np.asarray(target_idx, dtype=np.int64)] = False
        n_act = int(active[mask].sum())
    return active, n_act


def jaccard(a: Sequence[int] | set, b: Sequence[int] | set) -> float:
    """|a ∩ b| / |a ∪ b|, defined as 1.0 when both sets are empty."""
    sa, sb = set(a), set(b)
    union = sa | sb
    if not union:
        return 1.0
    return len(sa & sb) / len(union)


def relative_decrease(baseline: float, candidate: float) -> float:
    """Percent improvement of candidate over baseline (negative = worse)."""
    if baseline <= 0:
        raise ValueError("baseline must be strictly positive")
    return 100.0 * (baseline - candidate) / baseline


def tolerance_search(
    objective: Callable[[FloatArray], float],
    mode: str = "random",
    bounds: Sequence[float] | tuple[float, float] = (0.0, 1.0),
    n: int = 30,
    seed: int | None = None,
) -> tuple[FloatArray, float]:
    """Minimize a montage metric over tolerance-band triplets.

    ``mode="random"`` draws ``n`` [x, y, z] triplets uniformly from
    ``bounds = (lo, hi)``; ``mode="grid"`` evaluates the axis-uniform
    triplet (v, v, v) for each v in ``bounds``.  Candidates are
    generated up front (seeded) so evaluation order never changes the
    result; a failing callback skips that candidate.  Ties break to the
    lowest candidate index.
    """
    if mode == "random":
        lo, hi = float(bounds[0]), float(bounds[1])
        if not lo < hi:
            raise ValueError("bounds must satisfy lower < upper")
        rng = np.random.default_rng(seed)
        candidates = rng.uniform(lo, hi, size=(n, 3))
    elif mode == "grid":
        values = np.asarray(bounds, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("grid mode expects a non-empty value list")
        candidates = np.repeat(values[:, None], 3, axis=1)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    best_idx = -1
    best_metric = np.inf
    for idx, triplet in enumerate(candidates):
        try:
            metric = float(objective(triplet.copy()))
        except Exception:
            continue
        if not np.isfinite(metric):
            continue
        if metric < best_metric:
            best_metric = metric
            best_idx = idx
    if best_idx < 0:
        raise RuntimeError("every candidate evaluation failed")
    return candidates[best_idx].copy(), best_metric
