"""The standard result figures, built purely from upstream output files.

Every function returns a :class:`FigureArtifact` carrying the rendered
figure together with the exact numbers and annotation strings that were
drawn, so callers (and tests) can cross-check the figure against the
CSV without parsing SVG.  Bars are drawn series-major: the outer loop
walks the sorted series values, the inner loop the sorted group values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .style import STYLE, format_value
from .tables import Row, SchemaError, cell_float, read_regions, read_table, require_columns

_THEOREM1_COLUMNS = ("target", "i_safe_ma", "i_tot_mul", "e_des", "percent")
_L1L1_COLUMNS = ("eps", "alpha_reg", "percent_symmetric", "percent_one_sided")
_FOCALITY_COLUMNS = ("i_safe_ma", "i_tot_mul", "method", "n_act", "v_th_m3")
_FIELD_COLUMNS = (
    "voxel", "x_m", "y_m", "z_m", "magnitude", "projected", "region", "superthreshold",
)


@dataclass
class FigureArtifact:
    """A rendered figure plus the numbers that were drawn onto it."""

    figure: Figure
    groups: tuple[str, ...] = ()
    annotations: tuple[str, ...] = ()
    values: tuple[float, ...] = ()
    data: dict[str, np.ndarray] = field(default_factory=dict)


def _empty_axes(title: str, xlabel: str, ylabel: str) -> tuple[Figure, object]:
    fig = Figure()
    ax = fig.add_subplot()
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return fig, ax


def _grouped_bars(
    *,
    path: str,
    cells: dict[tuple[float, float], list[float]],
    title: str,
    xlabel: str,
    group_format: Callable[[float], str],
    series_label: Callable[[float], str],
) -> FigureArtifact:
    groups = sorted({g for g, _ in cells})
    series = sorted({s for _, s in cells})
    with matplotlib.rc_context(STYLE):
        fig, ax = _empty_axes(title, xlabel, "median relative difference (%)")
        drawn: list[str] = []
        labels: list[str] = []
        values: list[float] = []
        if groups:
            x = np.arange(len(groups), dtype=np.float64)
            width = 0.8 / max(len(series), 1)
            for j, s in enumerate(series):
                centers, heights, keys = [], [], []
                for i, g in enumerate(groups):
                    pool = cells.get((g, s), [])
                    if not pool:
                        continue
                    centers.append(x[i] + (j - (len(series) - 1) / 2.0) * width)
                    heights.append(float(np.median(pool)))
                    keys.append((g, s))
                bars = ax.bar(centers, heights, width=0.9 * width, label=series_label(s))
                for rect, med, key in zip(bars, heights, keys):
                    text = format_value(med)
                    ax.annotate(
                        text,
                        (rect.get_x() + rect.get_width() / 2.0, rect.get_height()),
                        ha="center", va="bottom", fontsize=8,
                    )
                    drawn.append(f"{group_format(key[0])}|{series_label(key[1])}")
                    labels.append(text)
                    values.append(med)
            ax.set_xticks(x)
            ax.set_xticklabels([group_format(g) for g in groups])
            ax.legend()
        return FigureArtifact(fig, tuple(drawn), tuple(labels), tuple(values))


def plot_equivalence(csv_path: str) -> FigureArtifact:
    """Grouped bars of median relative montage difference per grid cell.

    Accepts either equivalence table the ``verify`` command writes and
    dispatches on the header: the current-grid table groups by
    (per-electrode limit, budget multiplier); the tolerance-grid table
    groups by (tolerance, regularizer) and pools both variant columns.
    """
    header, rows = read_table(csv_path)
    if all(c in header for c in _THEOREM1_COLUMNS):
        cells: dict[tuple[float, float], list[float]] = {}
        for row in rows:
            g = cell_float(row, "i_safe_ma", csv_path)
            s = cell_float(row, "i_tot_mul", csv_path)
            if g is None or s is None:
                raise SchemaError(f"{csv_path}: empty grid cell coordinates")
            v = cell_float(row, "percent", csv_path)
            cells.setdefault((g, s), []).extend([] if v is None else [v])
        return _grouped_bars(
            path=csv_path, cells=cells, title="Montage equivalence",
            xlabel="per-electrode limit (mA)",
            group_format=format_value,
            series_label=lambda s: f"budget x{format_value(s)}",
        )
    if all(c in header for c in _L1L1_COLUMNS):
        cells = {}
        for row in rows:
            g = cell_float(row, "eps", csv_path)
            s = cell_float(row, "alpha_reg", csv_path)
            if g is None or s is None:
                raise SchemaError(f"{csv_path}: empty grid cell coordinates")
            pool = [
                v
                for key in ("percent_symmetric", "percent_one_sided")
                if (v := cell_float(row, key, csv_path)) is not None
            ]
            cells.setdefault((g, s), []).extend(pool)
        return _grouped_bars(
            path=csv_path, cells=cells, title="Sparse-design reduction",
            xlabel="tolerance",
            group_format=format_value,
            series_label=lambda s: f"reg {format_value(s)}",
        )
    raise SchemaError(f"{csv_path}: not an equivalence table (columns {header})")


def plot_relative_decrease(csv_path: str, baseline: str = "lcmv") -> FigureArtifact:
    """Grouped bars of relative decrease vs the baseline method.

    One group per (per-electrode limit, budget multiplier) cell; one bar
    per (method, metric) with metrics activation count and
    superthreshold volume.  Decrease is ``100 * (base - new) / base``;
    cells whose baseline metric is zero are skipped.
    """
    header, rows = read_table(csv_path)
    require_columns(header, _FOCALITY_COLUMNS, csv_path)
    by_cell: dict[tuple[float, float], dict[str, Row]] = {}
    for row in rows:
        g = cell_float(row, "i_safe_ma", csv_path)
        s = cell_float(row, "i_tot_mul", csv_path)
        if g is None or s is None:
            raise SchemaError(f"{csv_path}: empty grid cell coordinates")
        by_cell.setdefault((g, s), {})[row.get("method", "")] = row
    cells = sorted(by_cell)
    methods = sorted({m for per in by_cell.values() for m in per} - {baseline})
    metrics = (("n_act", "activation count"), ("v_th_m3", "superthreshold volume"))
    with matplotlib.rc_context(STYLE):
        fig, ax = _empty_axes(
            f"Relative decrease vs {baseline}",
            "grid cell",
            "relative decrease (%)",
        )
        drawn: list[str] = []
        labels: list[str] = []
        values: list[float] = []
        if cells and methods:
            x = np.arange(len(cells), dtype=np.float64)
            n_series = len(methods) * len(metrics)
            width = 0.8 / n_series
            j = 0
            for method in methods:
                for key, metric_label in metrics:
                    centers, heights, keys = [], [], []
                    for i, cell in enumerate(cells):
                        per = by_cell[cell]
                        if baseline not in per or method not in per:
                            continue
                        base = cell_float(per[baseline], key, csv_path)
                        new = cell_float(per[method], key, csv_path)
                        if base is None or new is None or base <= 0:
                            continue
                        centers.append(x[i] + (j - (n_series - 1) / 2.0) * width)
                        heights.append(100.0 * (base - new) / base)
                        keys.append(cell)
                    bars = ax.bar(
                        centers, heights, width=0.9 * width,
                        label=f"{method}: {metric_label}",
                    )
                    for rect, val, cell in zip(bars, heights, keys):
                        text = format_value(val)
                        ax.annotate(
                            text,
                            (rect.get_x() + rect.get_width() / 2.0, rect.get_height()),
                            ha="center", va="bottom", fontsize=8,
                        )
                        drawn.append(
                            f"{format_value(cell[0])}x{format_value(cell[1])}"
                            f"|{method}|{key}"
                        )
                        labels.append(text)
                        values.append(val)
                    j += 1
            ax.set_xticks(x)
            ax.set_xticklabels(
                [f"{format_value(g)} mA x{format_value(s)}" for g, s in cells]
            )
            ax.axhline(0.0, color="black", linewidth=0.8)
            ax.legend()
        return FigureArtifact(fig, tuple(drawn), tuple(labels), tuple(values))


def plot_field_map(field_csv: str, regions_path: str) -> FigureArtifact:
    """Scalar field map with the superthreshold region overlaid.

    Scatter of voxel positions in the x-z plane colored by field
    magnitude; target voxels drawn as triangles, superthreshold voxels
    ringed.  The voxel sets must match the region file.
    """
    header, rows = read_table(field_csv)
    require_columns(header, _FIELD_COLUMNS, field_csv)
    regions = read_regions(regions_path)
    n_target = sum(1 for r in rows if r.get("region") == "target")
    n_expected = len(regions["target_idx"]) + len(regions["offtarget_idx"])
    if n_target != len(regions["target_idx"]) or len(rows) != n_expected:
        raise SchemaError(f"{field_csv}: voxel sets do not match {regions_path}")

    def column(key: str) -> np.ndarray:
        return np.array([cell_float(r, key, field_csv) for r in rows], dtype=np.float64)

    xs, zs, mag = column("x_m"), column("z_m"), column("magnitude")
    is_target = np.array([r.get("region") == "target" for r in rows], dtype=bool)
    is_super = np.array([r.get("superthreshold") == "true" for r in rows], dtype=bool)
    n_super = int(is_super.sum())
    max_mag = float(mag.max()) if rows else 0.0
    with matplotlib.rc_context(STYLE):
        fig, ax = _empty_axes("Field magnitude and superthreshold region", "x (m)", "z (m)")
        ax.set_aspect("equal")
        vmax = max_mag if max_mag > 0 else 1.0
        sc = ax.scatter(
            xs[~is_target], zs[~is_target], c=mag[~is_target],
            cmap="viridis", vmin=0.0, vmax=vmax, s=14, marker="o",
        )
        ax.scatter(
            xs[is_target], zs[is_target], c=mag[is_target],
            cmap="viridis", vmin=0.0, vmax=vmax, s=42, marker="^",
        )
        ax.scatter(
            xs[is_super], zs[is_super], s=80, marker="o",
            facecolors="none", edgecolors="crimson", linewidths=1.0,
        )
        fig.colorbar(sc, ax=ax, label="|E| (V/m)")
        notes = (f"superthreshold: {n_super}", f"max |E|: {format_value(max_mag)}")
        ax.annotate(
            "\n".join(notes), (0.02, 0.98), xycoords="axes fraction",
            ha="left", va="top", fontsize=8,
        )
        return FigureArtifact(
            fig,
            groups=("superthreshold", "max_magnitude"),
            annotations=notes,
            values=(float(n_super), max_mag),
            data={"x": xs, "z": zs, "magnitude": mag, "superthreshold": is_super},
        )


def plot_losses(
    e_tol: float = 0.2,
    p_values: tuple[int, ...] = (1, 2, 3),
    half_range: float | None = None,
    n_points: int = 1001,
) -> FigureArtifact:
    """Square loss vs banded losses; zero exactly on [-e_tol, +e_tol].

    The sample grid always contains ±e_tol, so the zero-loss interval
    read off the curves is exact.
    """
    if e_tol <= 0:
        raise ValueError("e_tol must be positive")
    if not p_values or any(p not in (1, 2, 3) for p in p_values):
        raise ValueError("p_values must be a non-empty subset of {1, 2, 3}")
    if half_range is None:
        half_range = 4.0 * e_tol
    base = np.linspace(-half_range, half_range, n_points)
    xs = np.unique(np.concatenate([base, [-e_tol, 0.0, e_tol]]))
    data: dict[str, np.ndarray] = {"x": xs, "square": xs**2}
    for p in p_values:
        data[f"hinge_p{p}"] = (
            np.maximum(0.0, xs - e_tol) ** p + np.maximum(0.0, -xs - e_tol) ** p
        )
    zeros = xs[data[f"hinge_p{p_values[0]}"] == 0.0]
    zero_interval = (float(zeros[0]), float(zeros[-1]))
    with matplotlib.rc_context(STYLE):
        fig, ax = _empty_axes("Square vs banded losses", "residual field (V/m)", "loss")
        ax.plot(xs, data["square"], label="square", linestyle="--")
        for p in p_values:
            ax.plot(xs, data[f"hinge_p{p}"], label=f"banded p={p}")
        for edge in (-e_tol, e_tol):
            ax.axvline(edge, color="gray", linewidth=0.8, linestyle=":")
        note = (
            f"zero loss on [{format_value(-e_tol)}, {format_value(e_tol)}]"
        )
        ax.annotate(note, (0.02, 0.98), xycoords="axes fraction", ha="left", va="top")
        ax.legend()
        return FigureArtifact(
            fig,
            groups=("zero_lo", "zero_hi"),
            annotations=(note,),
            values=zero_interval,
            data=data,
        )
