"""Self-describing tensor container used for style and pose checkpoints.

Layout::

    magic      8 bytes   b"UDAPOSE1"
    header_len 8 bytes   little-endian uint64
    header     JSON (utf-8): {"meta": {...}, "tensors": [{"name", "shape", "offset"}, ...]}
    payload    concatenated little-endian float32 tensors, offsets relative to payload start

Integer buffers (e.g. batch-norm counters) are stored in the header's
``"ints"`` table rather than the float payload.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"UDAPOSE1"


def _to_numpy(value):
    if hasattr(value, "detach"):
        value = value.detach().cpu().numpy()
    return np.asarray(value)


def save_container(path, tensors: dict, meta: dict) -> None:
    entries, ints, chunks, offset = [], {}, [], 0
    for name, value in tensors.items():
        arr = _to_numpy(value)
        if arr.dtype.kind in "iub":
            ints[name] = {"shape": list(arr.shape), "values": arr.reshape(-1).tolist()}
            continue
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    header = json.dumps({"meta": meta, "tensors": entries, "ints": ints}, sort_keys=True).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def load_container(path):
    """Return ``(tensors, meta)``; tensors map names to numpy arrays."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint container")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + n].decode("utf-8"))
    payload = memoryview(raw)[16 + n:]
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        arr = np.frombuffer(payload[start:start + 4 * count], dtype="<f4").astype(np.float32)
        tensors[entry["name"]] = arr.reshape(entry["shape"])
    for name, entry in header.get("ints", {}).items():
        tensors[name] = np.asarray(entry["values"], dtype=np.int64).reshape(entry["shape"])
    return tensors, header["meta"]
