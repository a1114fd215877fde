"""CSV and metadata output shared by the experiment drivers.

Every CSV starts with a schema comment line ``# kbrw-csv v1 <name>``, then a
column header. Floats are written with 17 significant digits, so values
survive a round trip exactly. Each file ``X.csv`` gets a sidecar
``X.csv.meta.json`` holding the metadata passed by the caller plus the code
version.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from kbrw import __version__

SCHEMA_VERSION = 1
FLOAT_FMT = "%.17g"


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return FLOAT_FMT % f
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        # JSON has no infinities; keep them readable and parseable.
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        if math.isnan(f):
            return "nan"
        return f
    return obj


def write_csv(path, name: str, columns, rows, metadata: dict | None = None) -> Path:
    """Write a versioned CSV and its JSON sidecar; returns the CSV path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# kbrw-csv v{SCHEMA_VERSION} {name}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(columns))
        for row in rows:
            w.writerow([format_value(v) for v in row])
    meta = dict(metadata or {})
    meta.setdefault("code_version", __version__)
    meta["schema"] = f"kbrw-csv v{SCHEMA_VERSION} {name}"
    meta["columns"] = list(columns)
    sidecar = path.with_name(path.name + ".meta.json")
    sidecar.write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n")
    return path


def read_csv(path):
    """Read a file written by :func:`write_csv`; returns ``(schema, columns, rows)`` with string cells."""
    with Path(path).open() as fh:
        schema = fh.readline().rstrip("\n")
        if not schema.startswith("# kbrw-csv v"):
            raise ValueError(f"{path}: missing schema line")
        r = csv.reader(fh)
        columns = next(r)
        rows = [row for row in r]
    return schema[2:], columns, rows


def read_metadata(path) -> dict:
    path = Path(path)
    return json.loads(path.with_name(path.name + ".meta.json").read_text())
