"""Read the upstream command line's CSV/JSON outputs.

The files are the whole interface: this package never imports the
solver package.  CSV tables are RFC-4180 with one header row; region
files are the documented ``tesmontage-regions`` JSON format.
"""

from __future__ import annotations

import csv
import json
import math
from typing import Sequence

Row = dict[str, str]


class SchemaError(ValueError):
    """An input file does not match its documented schema."""


def read_table(path: str) -> tuple[list[str], list[Row]]:
    """Read a CSV table into (header, rows-as-string-dicts)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file (missing header row)") from None
        rows: list[Row] = []
        for lineno, record in enumerate(reader, start=2):
            if len(record) != len(header):
                raise SchemaError(
                    f"{path}: row {lineno} has {len(record)} cells,"
                    f" header has {len(header)}"
                )
            rows.append(dict(zip(header, record)))
    return header, rows


def require_columns(header: Sequence[str], needed: Sequence[str], path: str) -> None:
    missing = [c for c in needed if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")


def cell_float(row: Row, key: str, path: str) -> float | None:
    """Numeric cell value; None for empty or non-finite cells."""
    raw = row.get(key, "")
    if raw == "":
        return None
    try:
        value = float(raw)
    except ValueError:
        raise SchemaError(f"{path}: column {key!r}: not a number: {raw!r}") from None
    return value if math.isfinite(value) else None


def read_regions(path: str) -> dict:
    """Read and schema-check a region JSON file."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != "tesmontage-regions":
        raise SchemaError(f"{path}: expected format 'tesmontage-regions'")
    if doc.get("version") != 1:
        raise SchemaError(f"{path}: unsupported version {doc.get('version')!r}")
    for key in ("target_idx", "offtarget_idx"):
        if not isinstance(doc.get(key), list):
            raise SchemaError(f"{path}: missing array {key!r}")
    return doc
