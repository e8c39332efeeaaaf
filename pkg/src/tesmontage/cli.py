"""Command-line surface: ``forward``, ``solve``, ``verify``, ``metrics``, ``sweep``.

Every command is single-process (``sweep --study focality`` may spread
its grid cells over a thread pool).  Outputs are written atomically via
:mod:`tesmontage.fileio`.  Configuration precedence is
``flags > environment (TESMONTAGE_<KEY>) > --config file > defaults``.

Exit codes
----------
0   success
1   unexpected crash
2   configuration / input-file error
3   solver reported the problem infeasible
4   an equivalence gate failed in ``verify``

On any nonzero exit a single machine-readable JSON object is printed to
stderr: ``{"error": {"type": ..., "message": ..., "exit_code": ...}}``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from .equivalence import (
    L1L1SweepConfig,
    Theorem1Config,
    run_l1l1_sweep,
    run_theorem1_sweep,
)
from .fileio import (
    FormatError,
    load_config_file,
    read_forward_model,
    read_montage,
    read_regions,
    resolve_config,
    write_csv,
    write_forward_model,
    write_montage,
    write_regions,
)
from .metrics import activation_map, v_th
from .model import ConstraintSet, Montage, SolveReport, ToleranceBands
from .optimize import (
    HingeParams,
    L1L1Params,
    solve_cdm,
    solve_directional_max,
    solve_hinge,
    solve_l1l1,
    solve_lcmv_e,
)
from .regions import annulus_offtarget, build_region_spec, build_target_spec, disc_target
from .sphere import ElectrodeGrid, SphereModel, assemble_forward_matrix
from .studies import FocalityConfig, SubsampleConfig, run_focality_study, run_subsample_study

EXIT_OK = 0
EXIT_CRASH = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_GATE = 4


class CliError(Exception):
    """Maps to one exit code + error JSON on stderr."""

    def __init__(self, exit_code: int, kind: str, message: str):
        super().__init__(message)
        self.exit_code = exit_code
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as config errors (exit 2)."""

    def error(self, message: str):  # noqa: D102 - argparse override
        raise CliError(EXIT_CONFIG, "usage", f"{self.prog}: {message}")


def _emit_error(err: CliError) -> int:
    payload = {"error": {"type": err.kind, "message": str(err), "exit_code": err.exit_code}}
    print(json.dumps(payload), file=sys.stderr)
    return err.exit_code


def _parse_vec3(text: str, flag: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise CliError(EXIT_CONFIG, "config", f"{flag} needs three comma-separated numbers")
    try:
        return np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError:
        raise CliError(EXIT_CONFIG, "config", f"{flag}: could not parse {text!r}") from None


def _resolve(defaults: Mapping[str, Any], args: argparse.Namespace) -> dict[str, Any]:
    """Apply the flags > env > file > defaults precedence for one command."""
    file_cfg = load_config_file(getattr(args, "config", None))
    flags = {key: getattr(args, key, None) for key in defaults}
    return resolve_config(defaults, file_cfg, flags)


def _check_solver_outcome(report: SolveReport) -> None:
    if report.status == SolveReport.STATUS_INFEASIBLE:
        raise CliError(EXIT_INFEASIBLE, "infeasible", "solver reported the problem infeasible")
    if report.status != SolveReport.STATUS_OPTIMAL:
        raise CliError(
            EXIT_CRASH, "solver", f"solve ended with status {report.status!r}; no output written"
        )


# ---------------------------------------------------------------------------
# forward


_FORWARD_DEFAULTS: dict[str, Any] = {
    "out": "forward.json",
    "regions_out": "",  # empty -> "<out stem>_regions.json"
    "target_center": "0,0,0.079",
    "target_radius": 0.0,
    "offtarget_inner": 0.005,
    "offtarget_outer": 0.070,
    "spacing": 0.004,
    "direction": "radial-in",
}


def cmd_forward(args: argparse.Namespace) -> int:
    cfg = _resolve(_FORWARD_DEFAULTS, args)
    center = _parse_vec3(str(cfg["target_center"]), "--target-center")

    model = SphereModel.default()
    grid = ElectrodeGrid.default_patch()
    target = disc_target(center, float(cfg["target_radius"]), float(cfg["spacing"]))
    off = annulus_offtarget(
        center, float(cfg["offtarget_inner"]), float(cfg["offtarget_outer"]), float(cfg["spacing"])
    )
    voxels = np.vstack([target, off])
    volumes = np.full(voxels.shape[0], float(cfg["spacing"]) ** 3)
    fm = assemble_forward_matrix(
        model, grid, voxels, reference=grid.center_index, voxel_volumes=volumes
    )

    if str(cfg["direction"]) == "radial-in":
        dirs = -target / np.linalg.norm(target, axis=1, keepdims=True)
    else:
        d = _parse_vec3(str(cfg["direction"]), "--direction")
        dirs = np.tile(d / np.linalg.norm(d), (target.shape[0], 1))
    rs = build_region_spec(target.shape[0], off.shape[0], dirs)

    out = Path(str(cfg["out"]))
    regions_out = (
        Path(str(cfg["regions_out"]))
        if str(cfg["regions_out"])
        else out.with_name(out.stem + "_regions.json")
    )
    write_forward_model(fm, out)
    write_regions(regions_out, rs)
    print(
        f"forward: {fm.t.shape[0]}x{fm.t.shape[1]} matrix "
        f"({rs.n_target} target + {rs.n_offtarget} off-target voxels) -> {out}, {regions_out}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve


_SOLVE_DEFAULTS: dict[str, Any] = {
    "out": "montage.json",
    "e_des": 1.0,
    "i_safe": 200.0,
    "i_tot_mul": 2.0,
    "ridge": 0.0,
    "p": 2,
    "band": 0.0,
    "one_sided": False,
    "alpha": None,
    "eps": 0.1,
    "alpha_reg": 1e-3,
}


def cmd_solve(args: argparse.Namespace) -> int:
    cfg = _resolve(_SOLVE_DEFAULTS, args)
    fm = read_forward_model(args.forward)
    rs = read_regions(args.regions)
    ts = build_target_spec(fm, rs, float(cfg["e_des"]))
    cs = ConstraintSet(i_safe=float(cfg["i_safe"]), i_tot_mul=float(cfg["i_tot_mul"]))
    ridge = float(cfg["ridge"])

    method = args.method
    if method == "lcmv":
        montage, report = solve_lcmv_e(ts, cs, ridge=ridge)
    elif method == "hinge":
        hp = HingeParams(
            p=int(cfg["p"]),
            bands=ToleranceBands.uniform(ts.n_offtarget, float(cfg["band"])),
            ridge=ridge,
            one_sided=bool(cfg["one_sided"]),
        )
        montage, report = solve_hinge(ts, cs, hp)
    elif method == "cdm":
        if cfg["alpha"] is None:
            raise CliError(EXIT_CONFIG, "config", "--alpha is required for method 'cdm'")
        montage, report = solve_cdm(ts, cs, float(cfg["alpha"]), ridge=ridge)
    elif method == "dirmax":
        montage, report = solve_directional_max(ts, cs)
    elif method == "l1l1":
        lp = L1L1Params(
            eps=float(cfg["eps"]),
            alpha_reg=float(cfg["alpha_reg"]),
            ridge=ridge,
            one_sided=bool(cfg["one_sided"]),
        )
        montage, report = solve_l1l1(ts, cs, lp)
    else:  # argparse choices make this unreachable
        raise CliError(EXIT_CONFIG, "config", f"unknown method {method!r}")

    _check_solver_outcome(report)
    write_montage(
        Path(str(cfg["out"])),
        montage,
        cs=cs,
        report=report,
        electrode_ids=fm.electrode_ids,
        extra={"method": method, "e_des": float(cfg["e_des"])},
    )
    print(
        f"solve[{method}]: status={report.status} objective={report.objective:.6e} "
        f"l1={montage.l1():.3f} mA -> {cfg['out']}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


_VERIFY_DEFAULTS: dict[str, Any] = {
    "protocol": "both",
    "out_dir": ".",
    "scale": "full",
    "gate_percent": 1.0,
}


def _theorem1_gate(table, gate: float) -> tuple[bool, float]:
    medians = table.cell_medians(("target", "i_safe_ma", "i_tot_mul"))
    worst = max(medians.values()) if medians else float("nan")
    return bool(medians) and worst < gate, worst


def _l1l1_gate(table, gate: float) -> tuple[bool, float]:
    values = [
        v
        for key in ("percent_symmetric", "percent_one_sided")
        for v in table.column(key)
        if v is not None and np.isfinite(v)
    ]
    med = float(np.median(values)) if values else float("nan")
    return bool(values) and med < gate, med


def cmd_verify(args: argparse.Namespace) -> int:
    cfg = _resolve(_VERIFY_DEFAULTS, args)
    out_dir = Path(str(cfg["out_dir"]))
    gate = float(cfg["gate_percent"])
    smoke = str(cfg["scale"]) == "smoke"
    protocols = ("theorem1", "l1l1") if cfg["protocol"] == "both" else (str(cfg["protocol"]),)

    failures: list[str] = []
    for protocol in protocols:
        if protocol == "theorem1":
            t1 = (
                Theorem1Config(
                    i_safe_ma=(200.0,),
                    i_tot_mul=(2.0,),
                    ref_currents_ma=(80.0, 100.0, 120.0),
                    n_targets=1,
                )
                if smoke
                else Theorem1Config()
            )
            table = run_theorem1_sweep(t1)
            ok, worst = _theorem1_gate(table, gate)
            path = write_csv(out_dir / "theorem1_equivalence.csv", table.columns, table.rows)
        elif protocol == "l1l1":
            l1 = (
                L1L1SweepConfig(eps_grid=(0.1, 1.0), alpha_grid=(1e-5, 1e-3))
                if smoke
                else L1L1SweepConfig()
            )
            table = run_l1l1_sweep(l1)
            ok, worst = _l1l1_gate(table, gate)
            path = write_csv(out_dir / "l1l1_equivalence.csv", table.columns, table.rows)
        else:
            raise CliError(EXIT_CONFIG, "config", f"unknown protocol {protocol!r}")
        verdict = "PASS" if ok else "FAIL"
        print(
            f"verify[{protocol}]: {len(table.rows)} rows, "
            f"gate median {worst:.4f}% < {gate}% {verdict} -> {path}"
        )
        if not ok:
            failures.append(protocol)
    if failures:
        raise CliError(EXIT_GATE, "gate", f"equivalence gate failed for: {', '.join(failures)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# metrics


_METRICS_DEFAULTS: dict[str, Any] = {
    "out": "metrics.csv",
    "field_out": "",
    "e_des": 1.0,
    "v_fraction": 0.8,
    "threshold": None,
}

_METRIC_COLUMNS = ("metric", "value", "units")
_FIELD_COLUMNS = (
    "voxel",
    "x_m",
    "y_m",
    "z_m",
    "ex",
    "ey",
    "ez",
    "magnitude",
    "projected",
    "region",
    "superthreshold",
)


def cmd_metrics(args: argparse.Namespace) -> int:
    cfg = _resolve(_METRICS_DEFAULTS, args)
    fm = read_forward_model(args.forward)
    rs = read_regions(args.regions)
    montage, _ = read_montage(args.montage)
    if montage.n_electrodes != fm.n_electrodes:
        raise CliError(EXIT_CONFIG, "config", "montage and forward model electrode counts differ")

    e_des = float(cfg["e_des"])
    v_fraction = float(cfg["v_fraction"])
    fields = fm.fields_for_montage(montage.currents)
    mean_dir = rs.direction_field.mean(axis=0)
    mean_dir = mean_dir / np.linalg.norm(mean_dir)

    off_fields = fields[rs.offtarget_idx]
    off_volumes = fm.voxel_volumes[rs.offtarget_idx]
    off_proj = off_fields @ mean_dir
    target_proj = np.einsum("ij,ij->i", fields[rs.target_idx], rs.direction_field)
    volume = v_th(off_proj, e_des, v_fraction, off_volumes)
    cut = v_fraction * e_des

    rows: list[dict[str, Any]] = [
        dict(metric="target_projected_mean", value=float(target_proj.mean()), units="V/m"),
        dict(metric="v_th", value=volume, units="m^3"),
        dict(metric="n_superthreshold", value=int(np.sum(off_proj > cut)), units="voxels"),
        dict(metric="offtarget_max_magnitude",
             value=float(np.linalg.norm(off_fields, axis=1).max(initial=0.0)), units="V/m"),
        dict(metric="offtarget_mean_magnitude",
             value=float(np.linalg.norm(off_fields, axis=1).mean()) if off_fields.size else 0.0,
             units="V/m"),
        dict(metric="montage_l1", value=montage.l1(), units="mA"),
        dict(metric="montage_linf", value=montage.linf(), units="mA"),
        dict(metric="zero_sum_residual", value=montage.zero_sum_residual(), units="mA"),
    ]
    if cfg["threshold"] is not None:
        _, count = activation_map(off_fields, mean_dir, float(cfg["threshold"]))
        rows.append(dict(metric="activation_count", value=count, units="voxels"))
    out = write_csv(Path(str(cfg["out"])), _METRIC_COLUMNS, rows)
    print(f"metrics: v_th={volume:.3e} m^3 over {rs.n_offtarget} off-target voxels -> {out}")

    if str(cfg["field_out"]):
        target_set = set(rs.target_idx.tolist())
        field_rows = []
        proj_all = fields @ mean_dir
        for i in range(fm.n_voxels):
            field_rows.append(
                dict(
                    voxel=i,
                    x_m=fm.voxel_coords[i, 0],
                    y_m=fm.voxel_coords[i, 1],
                    z_m=fm.voxel_coords[i, 2],
                    ex=fields[i, 0],
                    ey=fields[i, 1],
                    ez=fields[i, 2],
                    magnitude=float(np.linalg.norm(fields[i])),
                    projected=float(proj_all[i]),
                    region="target" if i in target_set else "offtarget",
                    superthreshold=bool(proj_all[i] > cut),
                )
            )
        field_path = write_csv(Path(str(cfg["field_out"])), _FIELD_COLUMNS, field_rows)
        print(f"metrics: per-voxel field table -> {field_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


_SWEEP_DEFAULTS: dict[str, Any] = {
    "out": "study.csv",
    "scale": "full",
    "seed": None,
    "workers": 4,
}


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _resolve(_SWEEP_DEFAULTS, args)
    smoke = str(cfg["scale"]) == "smoke"
    if args.study == "focality":
        fc_kwargs: dict[str, Any] = {"workers": int(cfg["workers"])}
        if smoke:
            fc_kwargs.update(cells=((200.0, 2.0), (200.0, 4.0)), n_random=4)
        if cfg["seed"] is not None:
            fc_kwargs["seed"] = int(cfg["seed"])
        table = run_focality_study(FocalityConfig(**fc_kwargs))
    elif args.study == "subsample":
        sub_kwargs = {"keep_fractions": (0.25,)} if smoke else {}
        if cfg["seed"] is not None:
            sub_kwargs["seed"] = int(cfg["seed"])
        table = run_subsample_study(SubsampleConfig(**sub_kwargs))
    else:
        raise CliError(EXIT_CONFIG, "config", f"unknown study {args.study!r}")
    path = write_csv(Path(str(cfg["out"])), table.columns, table.rows)
    print(f"sweep[{args.study}]: {len(table.rows)} rows -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser / entry point


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tesmontage", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forward", help="build the spherical testbed forward model + regions")
    p.add_argument("--config", help="JSON config file (flags override its keys)")
    p.add_argument("--out", help="forward-model manifest path (default forward.json)")
    p.add_argument("--regions-out", dest="regions_out", help="region JSON path")
    p.add_argument("--target-center", dest="target_center", help="x,y,z in meters")
    p.add_argument("--target-radius", dest="target_radius", type=float, help="disc radius (m)")
    p.add_argument("--offtarget-inner", dest="offtarget_inner", type=float, help="annulus inner (m)")
    p.add_argument("--offtarget-outer", dest="offtarget_outer", type=float, help="annulus outer (m)")
    p.add_argument("--spacing", type=float, help="voxel spacing (m)")
    p.add_argument("--direction", help="'radial-in' or x,y,z")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("solve", help="solve one montage-design program")
    p.add_argument("--config", help="JSON config file (flags override its keys)")
    p.add_argument("--forward", required=True, help="forward-model manifest")
    p.add_argument("--regions", required=True, help="region JSON")
    p.add_argument(
        "--method", required=True, choices=("lcmv", "hinge", "cdm", "dirmax", "l1l1")
    )
    p.add_argument("--out", help="montage JSON path (default montage.json)")
    p.add_argument("--e-des", dest="e_des", type=float, help="desired intensity (V/m)")
    p.add_argument("--i-safe", dest="i_safe", type=float, help="per-electrode bound (mA)")
    p.add_argument("--i-tot-mul", dest="i_tot_mul", type=float, help="total budget multiplier")
    p.add_argument("--ridge", type=float, help="tie-break ridge weight")
    p.add_argument("--p", type=int, choices=(1, 2, 3), help="hinge power")
    p.add_argument("--band", type=float, help="uniform tolerance band (V/m)")
    p.add_argument("--one-sided", dest="one_sided", action="store_const", const=True,
                   help="drop the lower electrode bound (hinge / l1l1)")
    p.add_argument("--alpha", type=float, help="off-target energy bound (cdm)")
    p.add_argument("--eps", type=float, help="relaxation floor (l1l1)")
    p.add_argument("--alpha-reg", dest="alpha_reg", type=float, help="l1 weight (l1l1)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="run the equivalence sweeps, write CSV tables")
    p.add_argument("--config", help="JSON config file (flags override its keys)")
    p.add_argument("--protocol", choices=("theorem1", "l1l1", "both"))
    p.add_argument("--out-dir", dest="out_dir", help="directory for the CSV tables")
    p.add_argument("--scale", choices=("full", "smoke"), help="smoke = reduced grids")
    p.add_argument("--gate-percent", dest="gate_percent", type=float, help="median gate (%%)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("metrics", help="field metrics for a montage")
    p.add_argument("--config", help="JSON config file (flags override its keys)")
    p.add_argument("--forward", required=True, help="forward-model manifest")
    p.add_argument("--regions", required=True, help="region JSON")
    p.add_argument("--montage", required=True, help="montage JSON")
    p.add_argument("--out", help="metric CSV path (default metrics.csv)")
    p.add_argument("--field-out", dest="field_out", help="per-voxel field CSV path")
    p.add_argument("--e-des", dest="e_des", type=float, help="desired intensity (V/m)")
    p.add_argument("--v-fraction", dest="v_fraction", type=float, help="superthreshold fraction")
    p.add_argument("--threshold", type=float, help="activation threshold (V/m)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("sweep", help="run a study grid, write its CSV")
    p.add_argument("--config", help="JSON config file (flags override its keys)")
    p.add_argument("--study", required=True, choices=("focality", "subsample"))
    p.add_argument("--out", help="study CSV path (default study.csv)")
    p.add_argument("--scale", choices=("full", "smoke"), help="smoke = reduced grids")
    p.add_argument("--seed", type=int, help="override the study seed")
    p.add_argument("--workers", type=int, help="thread-pool size for grid cells")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as err:
        return _emit_error(err)
    except FormatError as err:
        return _emit_error(CliError(EXIT_CONFIG, "format", str(err)))
    except FileNotFoundError as err:
        return _emit_error(CliError(EXIT_CONFIG, "missing-file", str(err)))
    except (ValueError, OSError) as err:
        return _emit_error(CliError(EXIT_CRASH, "crash", f"{type(err).__name__}: {err}"))


if __name__ == "__main__":
    sys.exit(main())
