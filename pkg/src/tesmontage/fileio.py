"""Portable on-disk formats: forward-model blobs, montage/region JSON, CSV.

Every write is atomic — content goes to a temporary file in the
destination directory and is moved into place with :func:`os.replace` —
so an interrupted command never leaves a half-written artifact behind.

Format summary (the shipped schema document ``docs/formats.md`` is the
normative reference):

* Forward model: a JSON manifest next to a raw little-endian float64
  blob.  The manifest records dimensions, units, block order,
  endianness, per-section byte offsets and SHA-256 checksums, and the
  electrode labels; the blob holds the matrix rows (x-block, then y,
  then z, row-major), the voxel coordinates and the voxel volumes.
* Montages, regions and configs: JSON with explicit ``units`` fields;
  documents produced by randomized protocols carry a top-level
  ``seed``.
* Tables: RFC-4180 CSV (comma separated, CRLF line ends, minimal
  quoting, ``.`` decimal separator) with a fixed header row.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .model import ConstraintSet, FloatArray, ForwardModel, Montage, RegionSpec, SolveReport

FORWARD_FORMAT = "tesmontage-forward"
MONTAGE_FORMAT = "tesmontage-montage"
REGIONS_FORMAT = "tesmontage-regions"
FORMAT_VERSION = 1

_BLOB_DTYPE = np.dtype("<f8")  # little-endian float64, fixed by the format


class FormatError(ValueError):
    """A file does not conform to its declared schema."""


# ---------------------------------------------------------------------------
# atomic writes


def atomic_write_bytes(path: str | Path, data: bytes) -> Path:
    """Write ``data`` to ``path`` via a same-directory temp file + rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise
    return path


def atomic_write_text(path: str | Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def _write_json(path: str | Path, document: Mapping[str, Any]) -> Path:
    return atomic_write_text(path, json.dumps(document, indent=2, sort_keys=False) + "\n")


def _read_json(path: str | Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            doc = json.load(handle)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top level must be a JSON object")
    return doc


def _expect_format(doc: Mapping[str, Any], path: str | Path, name: str) -> None:
    if doc.get("format") != name:
        raise FormatError(f"{path}: expected format {name!r}, found {doc.get('format')!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {doc.get('version')!r}")


def _require(doc: Mapping[str, Any], path: str | Path, *keys: str) -> None:
    missing = [k for k in keys if k not in doc]
    if missing:
        raise FormatError(f"{path}: missing keys {missing}")


# ---------------------------------------------------------------------------
# forward model manifest + blob


def write_forward_model(fm: ForwardModel, manifest_path: str | Path) -> Path:
    """Serialize ``fm`` as ``<manifest>.json`` plus a sibling ``.bin`` blob.

    The blob concatenates three float64 little-endian sections in row-major
    order: the (3M, N) matrix, the (M, 3) voxel coordinates and the (M,)
    voxel volumes.  The manifest carries each section's byte offset and
    SHA-256 so readers can verify integrity before trusting the numbers.
    """
    manifest_path = Path(manifest_path)
    blob_path = manifest_path.with_suffix(".bin")

    sections: dict[str, dict[str, Any]] = {}
    chunks: list[bytes] = []
    offset = 0
    for name, arr in (
        ("matrix", fm.t),
        ("voxel_coords", fm.voxel_coords),
        ("voxel_volumes", fm.voxel_volumes),
    ):
        raw = np.ascontiguousarray(arr, dtype=_BLOB_DTYPE).tobytes()
        sections[name] = {
            "offset": offset,
            "length": len(raw),
            "shape": list(arr.shape),
            "sha256": hashlib.sha256(raw).hexdigest(),
        }
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)

    manifest = {
        "format": FORWARD_FORMAT,
        "version": FORMAT_VERSION,
        "blob": blob_path.name,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "dtype": "float64",
        "endianness": "little",
        "order": "row-major",
        "block_order": ["x", "y", "z"],
        "n_electrodes": fm.n_electrodes,
        "n_voxels": fm.n_voxels,
        "units": {
            "matrix": "(V/m)/mA",
            "voxel_coords": "m",
            "voxel_volumes": "m^3",
        },
        "sections": sections,
        "electrode_ids": list(fm.electrode_ids),
        "reference_note": fm.reference_note,
    }
    atomic_write_bytes(blob_path, blob)
    return _write_json(manifest_path, manifest)


def _read_section(blob: bytes, spec: Mapping[str, Any], name: str, path: Path) -> FloatArray:
    try:
        offset, length = int(spec["offset"]), int(spec["length"])
        shape = tuple(int(s) for s in spec["shape"])
        digest = str(spec["sha256"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed section {name!r}") from exc
    raw = blob[offset : offset + length]
    if len(raw) != length:
        raise FormatError(f"{path}: blob truncated in section {name!r}")
    if hashlib.sha256(raw).hexdigest() != digest:
        raise FormatError(f"{path}: checksum mismatch in section {name!r}")
    try:
        return np.frombuffer(raw, dtype=_BLOB_DTYPE).reshape(shape).astype(np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: section {name!r} does not match its shape") from exc


def read_forward_model(manifest_path: str | Path) -> ForwardModel:
    """Load and checksum-verify a forward model written by ``write_forward_model``."""
    manifest_path = Path(manifest_path)
    doc = _read_json(manifest_path)
    _expect_format(doc, manifest_path, FORWARD_FORMAT)
    _require(doc, manifest_path, "blob", "sections", "electrode_ids")
    if doc.get("dtype") != "float64" or doc.get("endianness") != "little":
        raise FormatError(f"{manifest_path}: blob must be little-endian float64")

    blob_path = manifest_path.parent / str(doc["blob"])
    if not blob_path.exists():
        raise FormatError(f"{manifest_path}: blob file {blob_path.name!r} is missing")
    blob = blob_path.read_bytes()
    if "blob_sha256" in doc and hashlib.sha256(blob).hexdigest() != doc["blob_sha256"]:
        raise FormatError(f"{manifest_path}: blob checksum mismatch")

    sections = doc["sections"]
    _require(sections, manifest_path, "matrix", "voxel_coords", "voxel_volumes")
    t = _read_section(blob, sections["matrix"], "matrix", manifest_path)
    coords = _read_section(blob, sections["voxel_coords"], "voxel_coords", manifest_path)
    volumes = _read_section(blob, sections["voxel_volumes"], "voxel_volumes", manifest_path)
    try:
        return ForwardModel(
            t=t,
            voxel_coords=coords,
            voxel_volumes=volumes,
            electrode_ids=tuple(str(e) for e in doc["electrode_ids"]),
            reference_note=str(doc.get("reference_note", "")),
        )
    except ValueError as exc:
        raise FormatError(f"{manifest_path}: {exc}") from exc


# ---------------------------------------------------------------------------
# montage JSON


def write_montage(
    path: str | Path,
    montage: Montage,
    cs: ConstraintSet | None = None,
    report: SolveReport | None = None,
    electrode_ids: Sequence[str] | None = None,
    extra: Mapping[str, Any] | None = None,
) -> Path:
    """Write a montage document with explicit units and the solve report."""
    doc: dict[str, Any] = {
        "format": MONTAGE_FORMAT,
        "version": FORMAT_VERSION,
        "units": {"current": "mA"},
        "currents_ma": [float(v) for v in montage.currents],
    }
    if electrode_ids is not None:
        doc["electrode_ids"] = list(electrode_ids)
    if cs is not None:
        doc["constraints"] = {
            "i_safe_ma": cs.i_safe,
            "i_tot_mul": cs.i_tot_mul,
            "l1_factor": cs.l1_factor,
        }
    if report is not None:
        doc["report"] = {
            "status": report.status,
            "objective": report.objective,
            "primal_residuals": {k: float(v) for k, v in report.primal_residuals.items()},
            "iterations": report.iterations,
            "wall_time_s": report.wall_time_s,
            "notes": list(report.notes),
        }
    if extra:
        doc.update(dict(extra))
    return _write_json(path, doc)


def read_montage(path: str | Path) -> tuple[Montage, dict]:
    """Read a montage document; returns the montage and the raw JSON."""
    doc = _read_json(path)
    _expect_format(doc, path, MONTAGE_FORMAT)
    _require(doc, path, "currents_ma", "units")
    if doc["units"].get("current") != "mA":
        raise FormatError(f"{path}: montage currents must be stored in mA")
    try:
        montage = Montage(currents=np.asarray(doc["currents_ma"], dtype=np.float64))
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad currents_ma ({exc})") from exc
    return montage, doc


# ---------------------------------------------------------------------------
# region JSON


def write_regions(path: str | Path, rs: RegionSpec, seed: int | None = None) -> Path:
    """Write a region document: index arrays, directions and weights."""
    doc: dict[str, Any] = {
        "format": REGIONS_FORMAT,
        "version": FORMAT_VERSION,
        "units": {"direction_field": "unit vectors", "gamma": "dimensionless or m^3"},
        "target_idx": [int(i) for i in rs.target_idx],
        "offtarget_idx": [int(i) for i in rs.offtarget_idx],
        "direction_field": [[float(v) for v in row] for row in rs.direction_field],
        "gamma_f": [float(v) for v in rs.gamma_f],
        "gamma_c": [float(v) for v in rs.gamma_c],
    }
    if seed is not None:
        doc["seed"] = int(seed)
    return _write_json(path, doc)


def read_regions(path: str | Path) -> RegionSpec:
    doc = _read_json(path)
    _expect_format(doc, path, REGIONS_FORMAT)
    _require(doc, path, "target_idx", "offtarget_idx", "direction_field", "gamma_f", "gamma_c")
    try:
        return RegionSpec(
            target_idx=np.asarray(doc["target_idx"], dtype=np.int64),
            offtarget_idx=np.asarray(doc["offtarget_idx"], dtype=np.int64),
            direction_field=np.asarray(doc["direction_field"], dtype=np.float64).reshape(-1, 3),
            gamma_f=np.asarray(doc["gamma_f"], dtype=np.float64),
            gamma_c=np.asarray(doc["gamma_c"], dtype=np.float64),
        )
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# CSV tables


def _csv_cell(value: Any) -> str:
    """Canonical cell text: repr for floats (round-trips, '.' separator)."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Path:
    """Write rows as RFC-4180 CSV with the given fixed column order."""
    buffer = io.StringIO()
    writer = csv.writer(buffer)  # "excel" dialect: comma, CRLF, minimal quoting
    writer.writerow(list(columns))
    for row in rows:
        writer.writerow([_csv_cell(row.get(c)) for c in columns])
    return atomic_write_text(path, buffer.getvalue())


def read_csv(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    """Read a CSV table; all cells come back as strings."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            columns = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty CSV, expected a header row") from None
        rows = []
        for record in reader:
            if len(record) != len(columns):
                raise FormatError(f"{path}: row {len(rows) + 2} has {len(record)} cells")
            rows.append(dict(zip(columns, record)))
    return columns, rows


# ---------------------------------------------------------------------------
# config resolution


def load_config_file(path: str | Path | None) -> dict:
    """Load a JSON config file; ``None`` means no file was given."""
    if path is None:
        return {}
    doc = _read_json(path)
    doc.pop("format", None)
    doc.pop("version", None)
    return doc


def resolve_config(
    defaults: Mapping[str, Any],
    file_config: Mapping[str, Any],
    flags: Mapping[str, Any],
    env: Mapping[str, str] | None = None,
    env_prefix: str = "TESMONTAGE_",
) -> dict[str, Any]:
    """Merge configuration sources; precedence flags > env > file > defaults.

    Environment variables are looked up as ``<prefix><KEY-upper-cased>``
    and parsed as JSON scalars where possible (so ``"0.5"`` becomes a
    float) and kept as strings otherwise.  Flag values of ``None`` mean
    "not given on the command line" and do not override anything.
    Unknown keys in the file config raise :class:`FormatError` so typos
    fail loudly instead of silently using a default.
    """
    if env is None:
        env = os.environ
    unknown = set(file_config) - set(defaults)
    if unknown:
        raise FormatError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(file_config)
    for key in defaults:
        env_value = env.get(env_prefix + key.upper())
        if env_value is not None:
            try:
                merged[key] = json.loads(env_value)
            except json.JSONDecodeError:
                merged[key] = env_value
    for key, value in flags.items():
        if value is not None:
            if key not in defaults:
                raise FormatError(f"unknown flag key: {key}")
            merged[key] = value
    return merged
