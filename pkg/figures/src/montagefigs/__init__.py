"""Figure rendering for tesmontage command-line outputs.

Consumes the documented CSV/JSON file formats only; the solver package
is never imported.  See :mod:`montagefigs.plots` for the four figures.
"""

from .plots import (
    FigureArtifact,
    plot_equivalence,
    plot_field_map,
    plot_losses,
    plot_relative_decrease,
)
from .style import format_value, save_svg
from .tables import SchemaError

__version__ = "0.1.0"

__all__ = [
    "FigureArtifact",
    "SchemaError",
    "__version__",
    "format_value",
    "plot_equivalence",
    "plot_field_map",
    "plot_losses",
    "plot_relative_decrease",
    "save_svg",
]
