"""CSV and JSON writers.  Floats use ``repr`` so reruns are byte-identical."""
import csv
import hashlib
import json
from pathlib import Path

import numpy as np


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_trajectory(path, traj):
    n = traj.values.shape[1]
    header = ["t"] + [f"node_{i}" for i in range(n)]
    rows = ([t, *u] for t, u in zip(traj.times, traj.values))
    return write_csv(path, header, rows)


def write_measure(path, measure, grid):
    """One row per charged cell: k, i, t_k, x_i (first coordinate), nu_{k,i}."""
    rows = []
    for k, i in zip(*np.nonzero(measure.masses)):
        rows.append([int(k), int(i), (k + 1) * measure.dt, grid.centers[i, 0], measure.masses[k, i]])
    return write_csv(path, ["k", "i", "t_k", "x_i", "nu"], rows)


def write_ledger(path, ledger):
    cols = list(ledger.keys())
    rows = zip(range(len(ledger[cols[0]])), *ledger.values())
    return write_csv(path, ["k", *cols], rows)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
