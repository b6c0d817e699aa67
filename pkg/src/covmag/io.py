"""CSV and JSON writers shared by the command-line front-end.

Every file starts with a provenance line naming the tool version and the
resolved seed.  CSV floats are written with 17 significant digits so they
round-trip exactly.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import __version__


def provenance(seed) -> str:
    return f"covmag {__version__} seed={seed}"


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, columns: dict, seed) -> Path:
    """Write equal-length ``columns`` (name -> sequence) under a provenance comment."""
    path = Path(path)
    names = list(columns)
    data = [np.asarray(columns[n]) for n in names]
    n = {len(d) for d in data}
    if len(n) > 1:
        raise ValueError(f"CSV columns have unequal lengths: {sorted(n)}")
    with path.open("w", newline="") as fh:
        fh.write(f"# {provenance(seed)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*data):
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path) -> dict:
    """Read a CSV written by :func:`write_csv` (or any CSV with a header row).

    Lines starting with ``#`` are skipped; numeric columns become float
    arrays, anything else stays a list of strings.
    """
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    if not rows:
        raise ValueError(f"{path}: no header row")
    header, body = rows[0], rows[1:]
    out = {}
    for k, name in enumerate(header):
        col = [r[k] for r in body]
        try:
            out[name] = np.array([float(v) for v in col])
        except ValueError:
            out[name] = col
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        # JSON has no inf/nan; null keeps the file parseable.
        return v if math.isfinite(v) else None
    return obj


def to_json(obj, seed=None) -> str:
    body = _jsonable(obj)
    if seed is not None and isinstance(body, dict):
        body = {"provenance": provenance(seed), **body}
    return json.dumps(body, indent=2)


def write_json(path, obj, seed) -> Path:
    path = Path(path)
    path.write_text(to_json(obj, seed) + "\n")
    return path
