"""Webdataset-style shard packing: write, read, verify, stream.

Each sample contributes three consecutive tar members sharing the key
basename, in fixed extension order: <key>.<image_ext>, <key>.txt (caption),
<key>.json (metadata). Shards are plain ustar archives so any tar reader
can list them; writing is bit-deterministic for a fixed spec.
"""

from __future__ import annotations

import json
import os
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

from .errors import DataError, ShardFormatError
from .hashing import sha256_hex, stable_json_dumps
from .ustar import decode_archive, encode_archive

_KEY_RE = re.compile(r"^[0-9]{9}$")


@dataclass(frozen=True)
class Sample:
    key: str
    image_bytes: bytes
    caption: str
    meta: dict

    def validate(self) -> None:
        if not _KEY_RE.match(self.key):
            raise DataError(f"sample key {self.key!r} is not a 9-digit zero-padded decimal")
        if not self.image_bytes:
            raise DataError(f"sample {self.key} has empty image bytes")
        if not self.caption:
            raise DataError(f"sample {self.key} has an empty caption")


@dataclass(frozen=True)
class ShardSpec:
    samples_per_shard: int = 256
    name_pattern: str = "shard-%06d.tar"
    shuffle_seed: Optional[int] = None
    image_extension: str = "pgm"

    def __post_init__(self):
        if self.samples_per_shard < 1:
            raise DataError(f"samples_per_shard must be >= 1, got {self.samples_per_shard}")
        if self.name_pattern.count("%") != 1:
            raise DataError(f"name_pattern needs exactly one integer placeholder: {self.name_pattern!r}")

    def to_dict(self) -> dict:
        return {
            "samples_per_shard": self.samples_per_shard,
            "name_pattern": self.name_pattern,
            "shuffle_seed": self.shuffle_seed,
            "image_extension": self.image_extension,
        }


@dataclass(frozen=True)
class ShardEntry:
    path: str
    count: int
    bytes: int
    digest: str


@dataclass(frozen=True)
class ShardManifest:
    shards: tuple[ShardEntry, ...]
    total_samples: int
    spec: ShardSpec
    # resolution root for relative shard paths; not serialized, so manifests
    # stay byte-identical regardless of where a run directory lives
    base_dir: str = "."

    def shard_path(self, entry: ShardEntry) -> Path:
        return Path(self.base_dir) / entry.path

    def to_json(self) -> str:
        return stable_json_dumps(
            {
                "shards": [
                    {"path": s.path, "count": s.count, "bytes": s.bytes, "digest": s.digest}
                    for s in self.shards
                ],
                "total_samples": self.total_samples,
                "spec": self.spec.to_dict(),
            }
        )

    @staticmethod
    def from_json(text: str, base_dir: str = ".") -> "ShardManifest":
        doc = json.loads(text)
        spec_doc = dict(doc["spec"])
        return ShardManifest(
            shards=tuple(
                ShardEntry(path=s["path"], count=s["count"], bytes=s["bytes"], digest=s["digest"])
                for s in doc["shards"]
            ),
            total_samples=doc["total_samples"],
            spec=ShardSpec(**spec_doc),
            base_dir=base_dir,
        )


def _meta_bytes(meta: dict) -> bytes:
    return (json.dumps(meta, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def _shard_bytes(samples: Sequence[Sample], image_ext: str) -> bytes:
    members: list[tuple[str, bytes]] = []
    for sample in samples:
        members.append((f"{sample.key}.{image_ext}", sample.image_bytes))
        members.append((f"{sample.key}.txt", sample.caption.encode("utf-8")))
        members.append((f"{sample.key}.json", _meta_bytes(sample.meta)))
    return encode_archive(members)


def _worker_count() -> int:
    raw = os.environ.get("LITFORGE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def write_shards(
    samples: Sequence[Sample],
    spec: ShardSpec,
    out_dir: str | Path,
    manifest_base: str | Path | None = None,
) -> ShardManifest:
    """Pack samples into ustar shards under out_dir and return the manifest.

    Sample order is ascending key, or a seeded Fisher-Yates permutation when
    spec.shuffle_seed is set. Identical inputs give bit-identical shards.
    Manifest entries are relative to manifest_base (default out_dir).
    """
    if not samples:
        raise DataError("cannot write shards for an empty dataset")
    keys = [s.key for s in samples]
    if len(set(keys)) != len(keys):
        dup = sorted(k for k in set(keys) if keys.count(k) > 1)[0]
        raise DataError(f"duplicate sample key {dup}")
    for sample in samples:
        sample.validate()

    ordered = sorted(samples, key=lambda s: s.key)
    if spec.shuffle_seed is not None:
        random.Random(spec.shuffle_seed).shuffle(ordered)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = Path(manifest_base) if manifest_base is not None else out_dir
    chunks = [
        ordered[i : i + spec.samples_per_shard]
        for i in range(0, len(ordered), spec.samples_per_shard)
    ]

    def build(index_chunk):
        index, chunk = index_chunk
        blob = _shard_bytes(chunk, spec.image_extension)
        path = out_dir / (spec.name_pattern % index)
        path.write_bytes(blob)
        return ShardEntry(
            path=os.path.relpath(path, base),
            count=len(chunk),
            bytes=len(blob),
            digest=sha256_hex(blob),
        )

    workers = min(_worker_count(), len(chunks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(build, enumerate(chunks)))
    else:
        entries = [build(item) for item in enumerate(chunks)]

    return ShardManifest(
        shards=tuple(entries), total_samples=len(ordered), spec=spec, base_dir=str(base)
    )


def save_manifest(manifest: ShardManifest, path: str | Path) -> None:
    Path(path).write_text(manifest.to_json(), encoding="utf-8")


def load_manifest(path: str | Path) -> ShardManifest:
    path = Path(path)
    return ShardManifest.from_json(path.read_text(encoding="utf-8"), base_dir=str(path.parent))


def _read_one_shard(path: Path) -> list[Sample]:
    archive = path.read_bytes()
    samples: list[Sample] = []
    pending_key: Optional[str] = None
    pending: dict[str, bytes] = {}

    def flush():
        nonlocal pending_key, pending
        if pending_key is None:
            return
        exts = set(pending)
        non_reserved = exts - {"txt", "json"}
        if "txt" not in exts or "json" not in exts or len(non_reserved) != 1:
            raise ShardFormatError(
                f"{path}: sample {pending_key} has members {sorted(exts)}, "
                "expected an image member plus .txt and .json"
            )
        image_ext = non_reserved.pop()
        samples.append(
            Sample(
                key=pending_key,
                image_bytes=pending[image_ext],
                caption=pending["txt"].decode("utf-8"),
                meta=json.loads(pending["json"].decode("utf-8")),
            )
        )
        pending_key, pending = None, {}

    for name, data in decode_archive(archive, source=str(path)):
        if "." not in name:
            raise ShardFormatError(f"{path}: member {name!r} has no extension")
        key, ext = name.rsplit(".", 1)
        if key != pending_key:
            flush()
            pending_key = key
        if ext in pending:
            raise ShardFormatError(f"{path}: duplicate member {name!r}")
        pending[ext] = data
    flush()
    return samples


def read_shards(manifest_or_dir: str | Path) -> list[Sample]:
    """Read samples back from a manifest JSON file or a directory of shards."""
    path = Path(manifest_or_dir)
    if path.is_dir():
        shard_paths = sorted(path.glob("*.tar"))
    else:
        manifest = load_manifest(path)
        shard_paths = [manifest.shard_path(entry) for entry in manifest.shards]
    if not shard_paths:
        raise DataError(f"no shards found at {manifest_or_dir}")
    samples: list[Sample] = []
    for shard_path in shard_paths:
        if not shard_path.exists():
            raise DataError(f"missing shard file: {shard_path}")
        samples.extend(_read_one_shard(shard_path))
    return samples


@dataclass(frozen=True)
class VerifyFinding:
    path: str
    kind: str  # missing_file | digest_mismatch | size_mismatch | count_mismatch
    message: str


def verify_manifest(manifest: ShardManifest) -> list[VerifyFinding]:
    """Recompute digests, sizes and counts; report mismatches without mutating."""
    findings: list[VerifyFinding] = []
    for entry in manifest.shards:
        path = manifest.shard_path(entry)
        if not path.exists():
            findings.append(VerifyFinding(entry.path, "missing_file", "shard file is missing"))
            continue
        blob = path.read_bytes()
        if len(blob) != entry.bytes:
            findings.append(
                VerifyFinding(
                    entry.path, "size_mismatch", f"expected {entry.bytes} bytes, found {len(blob)}"
                )
            )
        digest = sha256_hex(blob)
        if digest != entry.digest:
            findings.append(
                VerifyFinding(entry.path, "digest_mismatch", f"expected {entry.digest}, found {digest}")
            )
            continue
        count = len(_read_one_shard(path))
        if count != entry.count:
            findings.append(
                VerifyFinding(
                    entry.path, "count_mismatch", f"expected {entry.count} samples, found {count}"
                )
            )
    return findings


def stream_batches(
    source: ShardManifest | Sequence[Sample] | str | Path,
    batch_size: int,
    epoch_seed: int,
) -> Iterator[list[Sample]]:
    """Yield full batches covering a seeded permutation of all samples.

    The final short batch is dropped: the contrastive loss downstream
    depends on a fixed batch size.
    """
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    if isinstance(source, ShardManifest):
        samples = []
        for entry in source.shards:
            samples.extend(_read_one_shard(source.shard_path(entry)))
    elif isinstance(source, (str, Path)):
        samples = read_shards(source)
    else:
        samples = list(source)
    samples.sort(key=lambda s: s.key)
    random.Random(epoch_seed).shuffle(samples)
    for i in range(0, len(samples) - batch_size + 1, batch_size):
        yield samples[i : i + batch_size]
