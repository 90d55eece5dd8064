"""Digest and stable-serialization helpers used for provenance fields."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path, chunk_size: int = 1 << 20) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        while True:
            chunk = f.read(chunk_size)
            if not chunk:
                break
            h.update(chunk)
    return h.hexdigest()


def stable_json_dumps(obj) -> str:
    """Deterministic JSON text: sorted keys, no insignificant whitespace drift."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + "\n"
