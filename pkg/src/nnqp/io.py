"""Point-cloud CSV files and result JSON serialization."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def read_points(path) -> np.ndarray:
    """One point per line, comma separated; a non-numeric first line is a header."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path} contains no points")
    try:
        [float(tok) for tok in lines[0].split(",")]
    except ValueError:
        lines = lines[1:]
    rows = [[float(tok) for tok in ln.split(",")] for ln in lines]
    if len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: rows have different numbers of coordinates")
    return np.array(rows, dtype=float)


def write_points(path, points, header: bool = False):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    with open(path, "w") as fh:
        if header:
            fh.write(",".join(f"x{k}" for k in range(points.shape[1])) + "\n")
        for row in points:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        val = float(obj)
        return val if math.isfinite(val) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(payload: dict) -> str:
    return json.dumps(_plain(payload), indent=2, sort_keys=True)
