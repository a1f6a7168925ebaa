"""CSV/JSON writers with a fixed, round-trip-exact text format."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np


def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(v)


def write_csv(path, header, rows):
    """UTF-8, LF line endings, header row, floats with 17 significant digits."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
            w.writerow([format_value(v) for v in row])
    return path


def read_csv(path):
    with Path(path).open(encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    return v


def write_json(path, obj):
    path = Path(path)
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8", newline="\n")
    return path


def write_trajectory_dump(path, u):
    """Flat little-endian float64 dump of u (row-major) plus a JSON sidecar with its shape."""
    path = Path(path)
    u = np.ascontiguousarray(u, dtype="<f8")
    path.write_bytes(u.tobytes())
    write_json(path.with_suffix(path.suffix + ".json"),
               {"dtype": "float64", "byteorder": "little", "order": "C",
                "shape": list(u.shape), "axes": ["neuron", "t"]})
    return path


def read_trajectory_dump(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    return np.frombuffer(path.read_bytes(), dtype="<f8").reshape(meta["shape"])
