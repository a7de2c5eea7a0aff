"""CSV and JSON artifacts, each with a reader that round-trips the writer.

Floats are written with ``repr`` so a write/read cycle is exact. All files
are UTF-8 with LF line endings.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .gp import BoundaryDataset
from .reference import ReferenceGrid

SUMMARY_SCHEMA_VERSION = 1


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [row for row in r if row]
    return header, rows


def _float(s: str) -> float:
    return float(s) if s not in ("", "nan") else math.nan


# --- boundary datasets ------------------------------------------------------------

def write_boundary_csv(path, datasets: Sequence[BoundaryDataset]) -> Path:
    d = datasets[0].d
    cols = [f"x{k + 1}" for k in range(d)] + ["output", "value", "tag"]
    rows = []
    for ds in datasets:
        for x, u, t in zip(ds.X, ds.u, ds.tags):
            rows.append([*x, ds.output, u, t])
    return write_table(path, cols, rows)


def read_boundary_csv(path) -> list[BoundaryDataset]:
    header, rows = read_table(path)
    d = sum(1 for c in header if c.startswith("x"))
    groups: dict[str, list] = {}
    for row in rows:
        groups.setdefault(row[d], []).append(row)
    out = []
    for name, rs in groups.items():
        X = np.array([[float(v) for v in r[:d]] for r in rs])
        out.append(BoundaryDataset(X, [float(r[d + 1]) for r in rs], [r[d + 2] for r in rs], name))
    return out


# --- reference grids --------------------------------------------------------------

def write_reference_csv(path, grid: ReferenceGrid) -> Path:
    a0, a1 = grid.axes
    rows = ([x, y, grid.values[i, j]] for i, x in enumerate(a0) for j, y in enumerate(a1))
    return write_table(path, [grid.names[0], grid.names[1], "value"], rows)


def read_reference_csv(path) -> ReferenceGrid:
    header, rows = read_table(path)
    arr = np.array([[float(v) for v in r] for r in rows])
    a0 = np.unique(arr[:, 0])
    a1 = np.unique(arr[:, 1])
    values = np.empty((a0.size, a1.size))
    i = np.searchsorted(a0, arr[:, 0])
    j = np.searchsorted(a1, arr[:, 1])
    values[i, j] = arr[:, 2]
    return ReferenceGrid((a0, a1), values, (header[0], header[1]))


# --- loss reports -----------------------------------------------------------------

def read_loss_report(path):
    from .trainer import LossReport

    header, rows = read_table(path)
    rep = LossReport()
    for r in rows:
        row = {h: _float(v) for h, v in zip(header, r)}
        row["epoch"] = int(row["epoch"])
        rep.append(row)
    return rep


def write_loss_report(path, report, columns: Sequence[str] | None = None) -> Path:
    from .trainer import REPORT_COLUMNS

    columns = list(columns or REPORT_COLUMNS)
    return write_table(path, columns, ([row.get(c, math.nan) for c in columns] for row in report.rows))


# --- histograms -------------------------------------------------------------------

def write_histogram_csv(path, counts, edges) -> Path:
    rows = ([edges[i], edges[i + 1], int(c)] for i, c in enumerate(counts))
    return write_table(path, ["bin_lo", "bin_hi", "count"], rows)


def read_histogram_csv(path):
    _, rows = read_table(path)
    lo = [float(r[0]) for r in rows]
    hi = [float(r[1]) for r in rows]
    return np.array([int(r[2]) for r in rows]), np.array(lo + hi[-1:])


# --- JSON -------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def write_summary(path, payload: dict) -> Path:
    return write_json(path, {"schema_version": SUMMARY_SCHEMA_VERSION, **payload})


def read_summary(path) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    version = data.get("schema_version")
    if version != SUMMARY_SCHEMA_VERSION:
        raise ValueError(
            f"{path}: summary schema_version {version!r} is not supported (expected {SUMMARY_SCHEMA_VERSION})"
        )
    return data
