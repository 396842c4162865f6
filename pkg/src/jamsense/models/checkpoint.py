"""Checkpoint files: a JSON header plus a raw little-endian float32 blob."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .networks import ModelParams, spec_from_dict

CHECKPOINT_VERSION = 1


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return {"__array__": v.astype(np.float64).tolist()}
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    return v


def _from_json(v):
    if isinstance(v, dict) and "__array__" in v:
        return np.asarray(v["__array__"], dtype=np.float64)
    return v


def save_checkpoint(path, params: ModelParams, config_hash: str = "") -> Path:
    """Write ``<path>.json`` and ``<path>.f32``; returns the header path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    layout, offset = [], 0
    blobs = []
    for name in sorted(params.arrays):
        arr = np.ascontiguousarray(params.arrays[name], dtype="<f4")
        layout.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        blobs.append(arr.ravel())
    blob = np.concatenate(blobs).tobytes() if blobs else b""
    header = {
        "version": CHECKPOINT_VERSION,
        "spec": params.spec.to_dict(),
        "spec_hash": params.spec_hash,
        "config_hash": config_hash,
        "weights_file": path.name + ".f32",
        "weights_sha256": hashlib.sha256(blob).hexdigest(),
        "layout": layout,
        "meta": {k: _jsonable(v) for k, v in sorted(params.meta.items())},
    }
    (path.parent / header["weights_file"]).write_bytes(blob)
    header_path = path.parent / (path.name + ".json")
    header_path.write_text(json.dumps(header, indent=1, sort_keys=True) + "\n")
    return header_path


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    header_path = path if path.suffix == ".json" else path.parent / (path.name + ".json")
    header = json.loads(header_path.read_text())
    if header.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{header_path}: unsupported checkpoint version {header.get('version')}")
    blob = np.fromfile(header_path.parent / header["weights_file"], dtype="<f4")
    arrays = {}
    for entry in header["layout"]:
        size = int(np.prod(entry["shape"]))
        arrays[entry["name"]] = blob[entry["offset"]:entry["offset"] + size].reshape(entry["shape"]).astype(np.float32)
    spec = spec_from_dict(header["spec"])
    meta = {k: _from_json(v) for k, v in header["meta"].items()}
    return ModelParams(spec, arrays, meta)
