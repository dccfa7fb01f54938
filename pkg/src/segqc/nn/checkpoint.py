"""Weight checkpoints: one JSON header line + little-endian f32 payloads.

The header is ``{"meta": {...}, "tensors": [{"name", "shape", "trainable"},
...]}`` serialized with sorted keys, then "\n", then each tensor's raw f32
bytes concatenated in header order.  Batch norm running statistics are stored
like any other tensor and flagged non-trainable.
"""

import json

import numpy as np

from ..volume import DataFormatError


def save_checkpoint(path, params, meta=None):
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate parameter names in checkpoint: {dupes}")
    header = {
        "meta": meta or {},
        "tensors": [
            {"name": p.name, "shape": list(p.value.shape), "trainable": bool(p.trainable)}
            for p in params
        ],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for p in params:
            fh.write(np.ascontiguousarray(p.value, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (meta, list of (name, float32 array, trainable))."""
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"{path}: invalid checkpoint header ({exc})") from exc
        if not isinstance(header, dict) or "tensors" not in header:
            raise DataFormatError(f"{path}: checkpoint header missing tensor list")
        tensors = []
        for entry in header["tensors"]:
            shape = tuple(int(n) for n in entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise DataFormatError(
                    f"{path}: truncated payload for tensor {entry['name']!r}")
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
            tensors.append((entry["name"], arr, bool(entry.get("trainable", True))))
        if fh.read(1):
            raise DataFormatError(f"{path}: trailing bytes after declared tensors")
    return header.get("meta", {}), tensors


def load_into(params, path):
    """Restore parameter values by name; shapes must match. Returns meta."""
    meta, tensors = load_checkpoint(path)
    by_name = {name: arr for name, arr, _ in tensors}
    missing = [p.name for p in params if p.name not in by_name]
    if missing:
        raise DataFormatError(f"{path}: checkpoint missing tensors {missing}")
    for p in params:
        arr = by_name[p.name]
        if arr.shape != p.value.shape:
            raise DataFormatError(
                f"{path}: tensor {p.name!r} shape {arr.shape} != expected {p.value.shape}")
        p.value = arr.astype(p.value.dtype)
    return meta
