"""Flat parameter container: little-endian float64 blob plus a JSON manifest.

``<stem>.bin`` holds every array back to back; ``<stem>.json`` maps each name
to its shape and element offset. Names are written in the order given, so a
dict with a stable insertion order serializes byte-for-byte reproducibly.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CheckpointError

_DTYPE = "<f8"


def save_arrays(stem: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    manifest = {"dtype": "float64-le", "entries": []}
    offset = 0
    chunks = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype=_DTYPE)
        manifest["entries"].append({"name": name, "shape": list(a.shape), "offset": offset, "length": int(a.size)})
        offset += a.size
        chunks.append(a.tobytes())
    manifest["total"] = offset
    stem.with_suffix(".bin").write_bytes(b"".join(chunks))
    stem.with_suffix(".json").write_text(json.dumps(manifest, indent=1) + "\n")


def load_arrays(stem: str | Path) -> dict[str, np.ndarray]:
    stem = Path(stem)
    try:
        manifest = json.loads(stem.with_suffix(".json").read_text())
        blob = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype=_DTYPE)
    except FileNotFoundError as exc:
        raise CheckpointError(f"missing parameter container at {stem}: {exc}") from exc
    if blob.size != manifest["total"]:
        raise CheckpointError(f"{stem}.bin holds {blob.size} values, manifest expects {manifest['total']}")
    out = {}
    for e in manifest["entries"]:
        chunk = blob[e["offset"] : e["offset"] + e["length"]]
        out[e["name"]] = chunk.astype(np.float64).reshape(e["shape"])
    return out
