"""Weight file: one JSON header line, then little-endian float32 payload.

Header fields: ``format``, ``tensors`` (list of name / shape / offset /
count, offsets in bytes from the start of the payload) and an optional free
``meta`` object (e.g. a network configuration).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataError

MAGIC = "branchtopo-weights/1"


def save_weights(path, arrays: dict, meta: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        chunks.append(a.tobytes())
        offset += a.nbytes
    header = {"format": MAGIC, "dtype": "float32-le", "tensors": entries, "meta": meta or {}}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for c in chunks:
            fh.write(c)


def load_weights(path) -> tuple[dict, dict]:
    """Return ``(arrays, meta)``; arrays are float32 in declared order."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise DataError(f"{path}: missing weight-file header")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt weight-file header") from exc
    if header.get("format") != MAGIC:
        raise DataError(f"{path}: not a weight file")
    payload = raw[nl + 1:]
    arrays = {}
    for e in header["tensors"]:
        end = e["offset"] + 4 * e["count"]
        if end > len(payload):
            raise DataError(f"{path}: truncated payload for {e['name']!r}")
        a = np.frombuffer(payload[e["offset"]:end], dtype="<f4").astype(np.float32)
        arrays[e["name"]] = a.reshape(e["shape"])
    return arrays, header.get("meta", {})
