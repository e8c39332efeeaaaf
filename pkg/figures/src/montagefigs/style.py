"""Pinned rendering style so figures regenerate byte-stably."""

from __future__ import annotations

import matplotlib
from matplotlib.figure import Figure

# Every rcParam that affects the rendered bytes is pinned here; plots
# build their figures inside rc_context(STYLE) and save through
# save_svg, so the same inputs always produce the same file.
STYLE: dict[str, object] = {
    "figure.figsize": (8.0, 4.5),
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.family": "DejaVu Sans",
    "font.size": 10.0,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "svg.fonttype": "path",
    "svg.hashsalt": "montagefigs",
}


def format_value(value: float) -> str:
    """Annotation formatting, shared so callers can reproduce labels exactly."""
    if value == 0:
        return "0"
    return f"{value:.6g}"


def save_svg(fig: Figure, path: str) -> None:
    """Write an SVG whose bytes depend only on the figure contents."""
    with matplotlib.rc_context(STYLE):
        fig.savefig(path, format="svg", metadata={"Date": None})
