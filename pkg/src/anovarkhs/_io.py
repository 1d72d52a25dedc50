"""Output helpers: UTF-8, LF line endings, doubles at 17 significant digits."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

__all__ = ["fmt", "dumps", "write_json", "write_csv", "read_matrix", "sha256_file"]


def fmt(x) -> str:
    """Scalar to text; floats keep 17 significant digits so they round-trip."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    if x is None:
        return ""
    return str(x)


def _json_scalar(x) -> str:
    if x is None:
        return "null"
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        # JSON has no NaN/inf
        return "null" if not math.isfinite(x) else format(x, ".17g")
    if isinstance(x, str):
        return json.dumps(x, ensure_ascii=False)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with full-precision doubles. Key order is preserved."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_json_scalar(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_json_scalar(v) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    return _json_scalar(obj)


def write_json(path, obj) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj) + "\n")
    return path


def write_csv(path, rows, header=None) -> Path:
    """``rows`` are dicts (``header`` defaults to the first row's keys) or sequences."""
    path = Path(path)
    rows = list(rows)
    if header is None:
        header = list(rows[0].keys()) if rows and isinstance(rows[0], dict) else []
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(header)
        for r in rows:
            vals = [r.get(k, "") for k in header] if isinstance(r, dict) else list(r)
            w.writerow([fmt(v) for v in vals])
    return path


def read_matrix(path) -> np.ndarray:
    """Numeric CSV, optional header row, to a 2-D float array."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path}: empty file")
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        rows = rows[1:]
    arr = np.array([[float(v) for v in r] for r in rows], dtype=float)
    return arr


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
