"""Parameter checkpoints: a JSON manifest plus a little-endian binary blob.

The manifest lists every parameter's name, shape, byte offset and dtype, and
stores a sha256 of the blob so corruption is caught at load time. Values are
written in float64 by default; float32 is accepted for smaller files (loading
always widens back to float64).
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from .tensor import ParamStore

FORMAT_NAME = "hoigraph-checkpoint-v1"

_DTYPES = {"float64": "<f8", "float32": "<f4"}


class CheckpointError(ValueError):
    """Checkpoint file is missing, malformed, or fails its integrity hash."""


def _paths(path: str) -> tuple[str, str]:
    p = str(path)
    if p.endswith(".json"):
        return p, p[:-5] + ".bin"
    return p + ".json", p + ".bin"


def save_checkpoint(store: ParamStore, path: str, extra: dict | None = None,
                    dtype: str = "float64") -> tuple[str, str]:
    """Write ``path``.json and ``path``.bin; returns the two file names."""
    if dtype not in _DTYPES:
        raise CheckpointError(f"unsupported dtype {dtype!r}; use one of {sorted(_DTYPES)}")
    np_dtype = _DTYPES[dtype]
    entries = []
    chunks = []
    offset = 0
    for name, t in store.items():
        raw = np.ascontiguousarray(t.data, dtype=np_dtype).tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "dtype": dtype})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format": FORMAT_NAME,
        "params": entries,
        "blob_bytes": len(blob),
        "sha256": hashlib.sha256(blob).hexdigest(),
        "extra": extra or {},
    }
    manifest_path, blob_path = _paths(path)
    with open(blob_path, "wb") as fh:
        fh.write(blob)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest_path, blob_path


def load_checkpoint(path: str) -> tuple[ParamStore, dict]:
    """Read a checkpoint back into a fresh ParamStore; returns (store, extra)."""
    manifest_path, blob_path = _paths(path)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as e:
        raise CheckpointError(f"checkpoint manifest is not valid JSON: {e}") from None
    if manifest.get("format") != FORMAT_NAME:
        raise CheckpointError(f"unrecognized checkpoint format {manifest.get('format')!r}")
    try:
        with open(blob_path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint blob not found: {blob_path}") from None
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest.get("sha256"):
        raise CheckpointError("checkpoint blob does not match its stored sha256")

    store = ParamStore()
    for entry in manifest["params"]:
        shape = tuple(int(v) for v in entry["shape"])
        count = math.prod(shape) if shape else 1
        dtype = entry.get("dtype", "float64")
        if dtype not in _DTYPES:
            raise CheckpointError(f"parameter {entry['name']!r} has unsupported dtype {dtype!r}")
        arr = np.frombuffer(blob, dtype=_DTYPES[dtype], count=count,
                            offset=int(entry["offset"])).reshape(shape)
        store.add(entry["name"], arr.astype(np.float64))
    return store, manifest.get("extra", {})
