"""Checkpoint persistence: a JSON manifest plus one raw float32 blob.

The manifest lists (name, shape, byte offset) for every entry in the blob,
which is little-endian float32 throughout, so checkpoints stay inspectable
and language-neutral. Round-trips are bit-exact.
"""

from __future__ import annotations

import datetime
import hashlib
import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
MANIFEST_NAME = "checkpoint.json"
BLOB_NAME = "checkpoint.blob"


def save_entries(out_dir: str | Path, entries: dict[str, np.ndarray], meta: dict | None = None) -> str:
    """Write all named arrays and return the checkpoint's content id."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_entries = []
    chunks = []
    offset = 0
    for name, arr in entries.items():
        arr32 = np.asarray(arr, dtype="<f4")
        manifest_entries.append({"name": name, "shape": list(arr32.shape), "offset": offset})
        chunks.append(np.ascontiguousarray(arr32).tobytes())
        offset += arr32.nbytes
    blob = b"".join(chunks)
    content_id = hashlib.sha256(blob).hexdigest()[:16]
    manifest = {
        "format_version": FORMAT_VERSION,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "content_id": content_id,
        "blob_bytes": len(blob),
        "meta": meta or {},
        "entries": manifest_entries,
    }
    (out_dir / BLOB_NAME).write_bytes(blob)
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return content_id


def load_entries(ckpt_dir: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read every entry back; returns (entries, manifest)."""
    ckpt_dir = Path(ckpt_dir)
    manifest_path = ckpt_dir / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"missing checkpoint at {ckpt_dir}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')}")
    blob = (ckpt_dir / BLOB_NAME).read_bytes()
    if len(blob) != manifest["blob_bytes"]:
        raise ValueError("blob length disagrees with manifest")
    entries: dict[str, np.ndarray] = {}
    for ent in manifest["entries"]:
        shape = tuple(ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = ent["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(shape)
        entries[ent["name"]] = arr.copy()
    return entries, manifest
