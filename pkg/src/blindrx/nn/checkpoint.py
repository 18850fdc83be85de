"""Checkpoint file format: one JSON manifest line, then raw little-endian
float64 blobs concatenated in manifest order."""

from __future__ import annotations

import json
from typing import Dict

import numpy as np

FORMAT_VERSION = 1


def save_checkpoint(path: str, state: Dict[str, np.ndarray], meta: dict = None):
    manifest = {
        "version": FORMAT_VERSION,
        "meta": meta or {},
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in state.items()],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(manifest).encode("utf-8") + b"\n")
        for v in state.values():
            f.write(np.asarray(v, dtype="<f8").tobytes())


def load_checkpoint(path: str):
    """Returns (state dict, meta dict)."""
    with open(path, "rb") as f:
        manifest = json.loads(f.readline().decode("utf-8"))
        if manifest.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {manifest.get('version')}")
        state = {}
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"truncated checkpoint at tensor {entry['name']}")
            state[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return state, manifest["meta"]
