"""CSV and JSON file formats used by the command-line tools."""

import csv
import json
from pathlib import Path

import numpy as np

from .geometry import Metric, PointSet


class InputError(ValueError):
    """Malformed or inconsistent input files."""


def _read_rows(path, columns):
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            header = [h.strip() for h in (reader.fieldnames or [])]
            if header[: len(columns)] != list(columns) and sorted(header) != sorted(columns):
                raise InputError(f"{path}: expected header {','.join(columns)}, got {','.join(header)}")
            rows = [{k.strip(): v for k, v in row.items() if k is not None} for row in reader]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    return rows


def _keyed(path, rows, columns, parsers):
    """Parse rows into arrays ordered by id, checking ids are exactly ``0..n-1``."""
    try:
        ids = np.array([int(r["id"]) for r in rows], dtype=np.int64)
        cols = {c: np.array([parsers[c](r[c]) for r in rows]) for c in columns}
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: unparseable value ({exc})") from exc
    if len(np.unique(ids)) != len(ids):
        raise InputError(f"{path}: duplicate ids")
    order = np.argsort(ids)
    if not np.array_equal(ids[order], np.arange(len(ids))):
        raise InputError(f"{path}: ids must be contiguous 0..n-1")
    return {c: v[order] for c, v in cols.items()}


def read_locations(path, metric=Metric.CHEBYSHEV):
    rows = _read_rows(path, ("id", "x", "y"))
    if not rows:
        raise InputError(f"{path}: no locations")
    cols = _keyed(path, rows, ("x", "y"), {"x": float, "y": float})
    try:
        return PointSet(np.column_stack([cols["x"], cols["y"]]), metric)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc


def write_locations(path, ps):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y"])
        for i, (x, y) in enumerate(ps.coords):
            w.writerow([i, repr(float(x)), repr(float(y))])


def read_partition(path):
    rows = _read_rows(path, ("id", "cluster"))
    return _keyed(path, rows, ("cluster",), {"cluster": int})["cluster"]


def write_partition(path, part):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "cluster"])
        for i, k in enumerate(part.membership):
            w.writerow([i, int(k)])


def read_assignment(path):
    """Return ``(membership, unit_treatments)`` ordered by id."""
    rows = _read_rows(path, ("id", "cluster", "treatment"))
    cols = _keyed(path, rows, ("cluster", "treatment"), {"cluster": int, "treatment": int})
    if not np.all(np.isin(cols["treatment"], (0, 1))):
        raise InputError(f"{path}: treatments must be 0 or 1")
    return cols["cluster"], cols["treatment"]


def write_assignment(path, part, design):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "cluster", "treatment"])
        for i, (k, d) in enumerate(zip(part.membership, design.unit_treatments)):
            w.writerow([i, int(k), int(d)])


def read_outcomes(path):
    rows = _read_rows(path, ("id", "outcome"))
    return _keyed(path, rows, ("outcome",), {"outcome": float})["outcome"]


def write_outcomes(path, y):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "outcome"])
        for i, v in enumerate(y):
            w.writerow([i, repr(float(v))])


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
