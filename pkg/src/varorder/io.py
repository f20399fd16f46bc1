"""CSV and JSON readers and writers with lossless float formatting."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .exceptions import UsageError
from .model import Dataset

FLOAT_FMT = "%.17g"


def fmt(x):
    """17 significant digits; integers and strings pass through."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return FLOAT_FMT % x
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_matrix_csv(path, header, matrix):
    """Fast path for a 2-D float array."""
    matrix = np.asarray(matrix, dtype=float)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow(header)
        if matrix.size:
            np.savetxt(fh, matrix, fmt=FLOAT_FMT, delimiter=",")


def write_dict_csv(path, rows, header=None):
    if header is None:
        header = list(rows[0].keys()) if rows else []
    write_csv(path, header, [[r.get(k, "") for k in header] for r in rows])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps_json(obj):
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps_json(obj), encoding="utf-8")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def read_data_csv(path, time_step=1.0, time_unit="samples"):
    """Numeric CSV with a header row, one column per series.

    Errors name the 1-based file line and the column header.
    """
    try:
        fh = open(path, encoding="utf-8", newline="")
    except FileNotFoundError as exc:
        raise UsageError(f"data file not found: {path}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise UsageError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if not header or any(h == "" for h in header):
            raise UsageError(f"{path}: header row has empty column names")
        if len(set(header)) != len(header):
            raise UsageError(f"{path}: duplicate column names in header")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise UsageError(f"{path}: row at line {line_no} has {len(row)} cells, expected {len(header)}")
            vals = []
            for col, cell in zip(header, row):
                cell = cell.strip()
                if cell == "":
                    raise UsageError(f"{path}: missing value at line {line_no}, column '{col}'")
                try:
                    v = float(cell)
                except ValueError:
                    raise UsageError(f"{path}: non-numeric value {cell!r} at line {line_no}, column '{col}'") from None
                if not math.isfinite(v):
                    raise UsageError(f"{path}: non-finite value {cell!r} at line {line_no}, column '{col}'")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise UsageError(f"{path}: no data rows")
    return Dataset(y=np.array(rows), time_step=time_step, time_unit=time_unit, names=header)


def write_data_csv(path, data):
    write_matrix_csv(path, data.names, data.y)


def read_regions_csv(path):
    """Region metadata: columns ``name`` and ``label``, optional ``x`` and ``y``."""
    try:
        fh = open(path, encoding="utf-8", newline="")
    except FileNotFoundError as exc:
        raise UsageError(f"region file not found: {path}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "name" not in reader.fieldnames:
            raise UsageError(f"{path}: region file needs a 'name' column")
        out = {}
        for line_no, row in enumerate(reader, start=2):
            entry = {"label": (row.get("label") or row["name"]).strip()}
            if row.get("x") not in (None, "") and row.get("y") not in (None, ""):
                try:
                    entry["pos"] = (float(row["x"]), float(row["y"]))
                except ValueError:
                    raise UsageError(f"{path}: non-numeric coordinate at line {line_no}") from None
            out[row["name"].strip()] = entry
    return out


def read_draws_csv(path):
    """Returns ``(header, array)`` of a draws file."""
    with open(path, encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh))
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, arr


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
