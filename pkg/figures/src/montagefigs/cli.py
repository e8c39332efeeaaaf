"""Command line: render the standard figures from upstream output files."""

from __future__ import annotations

import argparse
import sys

from .plots import plot_equivalence, plot_field_map, plot_losses, plot_relative_decrease
from .style import save_svg
from .tables import SchemaError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="montagefigs",
        description="Render result figures from tesmontage CSV/JSON outputs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    eq = sub.add_parser("equivalence", help="median montage-difference bars")
    eq.add_argument("csv", help="equivalence CSV from the verify command")
    eq.add_argument("-o", "--out", default="equivalence.svg")

    de = sub.add_parser("decrease", help="relative-decrease bars vs the baseline")
    de.add_argument("csv", help="focality study CSV from the sweep command")
    de.add_argument("--baseline", default="lcmv")
    de.add_argument("-o", "--out", default="decrease.svg")

    fm = sub.add_parser("fieldmap", help="field magnitude map with region overlay")
    fm.add_argument("field_csv", help="per-voxel field CSV (metrics --field-out)")
    fm.add_argument("regions", help="region JSON file")
    fm.add_argument("-o", "--out", default="fieldmap.svg")

    lo = sub.add_parser("losses", help="square vs banded loss curves")
    lo.add_argument("--e-tol", type=float, default=0.2)
    lo.add_argument("--p", type=int, nargs="+", default=[1, 2, 3], choices=(1, 2, 3))
    lo.add_argument("-o", "--out", default="losses.svg")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "equivalence":
            artifact = plot_equivalence(args.csv)
        elif args.command == "decrease":
            artifact = plot_relative_decrease(args.csv, baseline=args.baseline)
        elif args.command == "fieldmap":
            artifact = plot_field_map(args.field_csv, args.regions)
        else:
            artifact = plot_losses(e_tol=args.e_tol, p_values=tuple(args.p))
        save_svg(artifact.figure, args.out)
    except (SchemaError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
