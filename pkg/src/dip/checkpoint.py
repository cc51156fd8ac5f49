"""Parameter checkpoints: u64 header length, JSON header, raw little-endian arrays."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_DTYPES = {"f64": "<f8", "f32": "<f4"}


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    names = sorted(params)
    first = params[names[0]].dtype if names else np.float64
    precision = "f32" if first == np.float32 else "f64"
    header = {
        "precision": precision,
        "params": [{"name": k, "shape": list(params[k].shape)} for k in names],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(np.ascontiguousarray(params[k], dtype=_DTYPES[precision]).tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    (hlen,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8:8 + hlen])
    dtype = np.dtype(_DTYPES[header["precision"]])
    pos = 8 + hlen
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        nbytes = count * dtype.itemsize
        if pos + nbytes > len(raw):
            raise ValueError(f"checkpoint truncated at {entry['name']}")
        params[entry["name"]] = np.frombuffer(raw, dtype=dtype, count=count, offset=pos).reshape(shape).astype(dtype.newbyteorder("="))
        pos += nbytes
    if pos != len(raw):
        raise ValueError("trailing bytes in checkpoint")
    return params, header.get("meta", {})
