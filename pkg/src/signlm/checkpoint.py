"""Directory-based checkpoint format shared by every stage.

Layout: `index.json` maps tensor names to {shape, dtype, blob file, byte offset,
digest}; all values live in one little-endian float32 blob. Digests are verified
on load and a load-then-save round trip is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
BLOB_NAME = "params.bin"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(directory, tensors: dict, config: dict = None,
                    freeze: dict = None) -> None:
    """tensors: {name: np.ndarray}. Written sorted by name for determinism."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {"format_version": FORMAT_VERSION, "config": config or {},
             "freeze": freeze or {}, "blob": BLOB_NAME, "tensors": {}}
    offset = 0
    chunks = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = arr.tobytes()
        index["tensors"][name] = {
            "shape": list(arr.shape),
            "dtype": "<f4",
            "file": BLOB_NAME,
            "offset": offset,
            "digest": hashlib.sha256(raw).hexdigest(),
        }
        chunks.append(raw)
        offset += len(raw)
    (directory / BLOB_NAME).write_bytes(b"".join(chunks))
    (directory / "index.json").write_text(
        json.dumps(index, sort_keys=True, indent=1) + "\n")


def load_checkpoint(directory):
    """Returns (tensors dict, config dict, freeze dict); verifies digests."""
    directory = Path(directory)
    index_path = directory / "index.json"
    if not index_path.exists():
        raise CheckpointError(f"no checkpoint at {directory}")
    index = json.loads(index_path.read_text())
    if index.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version "
                              f"{index.get('format_version')}")
    blob = (directory / index["blob"]).read_bytes()
    tensors = {}
    for name, meta in index["tensors"].items():
        n = int(np.prod(meta["shape"])) if meta["shape"] else 1
        raw = blob[meta["offset"]:meta["offset"] + 4 * n]
        if hashlib.sha256(raw).hexdigest() != meta["digest"]:
            raise CheckpointError(f"digest mismatch for tensor {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(meta["shape"]).copy()
    return tensors, index.get("config", {}), index.get("freeze", {})


def checkpoint_digest(directory) -> str:
    """Digest of the whole checkpoint (index + blob), for determinism checks."""
    directory = Path(directory)
    h = hashlib.sha256()
    h.update((directory / "index.json").read_bytes())
    h.update((directory / BLOB_NAME).read_bytes())
    return h.hexdigest()
