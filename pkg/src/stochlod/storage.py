"""Little-endian double arrays with JSON manifests."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def write_array(stem, array: np.ndarray, manifest: dict) -> Path:
    """Write ``<stem>.f64`` and ``<stem>.json``; returns the data path."""
    stem = Path(stem)
    data = stem.with_suffix(".f64")
    arr = np.ascontiguousarray(array, dtype="<f8")
    data.write_bytes(arr.tobytes())
    meta = dict(manifest)
    meta["shape"] = list(arr.shape)
    meta["dtype"] = "float64-le"
    meta["data"] = data.name
    write_json(stem.with_suffix(".json"), meta)
    return data


def read_array(stem) -> tuple[np.ndarray, dict]:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    arr = np.fromfile(stem.parent / meta["data"], dtype="<f8").reshape(meta["shape"])
    return arr, meta


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
