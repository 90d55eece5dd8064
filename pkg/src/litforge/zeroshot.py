"""Zero-shot evaluation: class prompt embeddings and top-k accuracy."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .captions import CaptionSet
from .errors import DataError
from .hashing import sha256_hex, stable_json_dumps
from .model import ImageTower, TextTower, Tokenizer, encode_image, encode_text, tokenize
from .shards import Sample
from .trainer import _sample_pixels


@dataclass(frozen=True)
class ClassEmbeddingBank:
    matrix: np.ndarray  # (num_classes, d_embed), unit rows
    class_ids: tuple[int, ...]
    caption_set_digest: str
    collisions: tuple[tuple[int, int], ...] = ()  # class-id pairs sharing a caption

    def digest(self) -> str:
        return sha256_hex(self.matrix.tobytes())


@dataclass
class EvalReport:
    top1: float  # percent
    top5: float
    n_images: int
    per_class_top1: dict[int, float]
    config: dict = field(default_factory=dict)
    bank_digest: str = ""
    collisions: list = field(default_factory=list)

    def to_json(self) -> str:
        return stable_json_dumps(
            {
                "top1": self.top1,
                "top5": self.top5,
                "n_images": self.n_images,
                "per_class_top1": {str(cid): acc for cid, acc in self.per_class_top1.items()},
                "config": self.config,
                "bank_digest": self.bank_digest,
                "collisions": self.collisions,
            }
        )

    def per_class_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["class_id", "top1_percent"])
        for cid in sorted(self.per_class_top1):
            writer.writerow([cid, f"{self.per_class_top1[cid]:.6g}"])
        return buf.getvalue()


def build_class_bank(
    captions: CaptionSet, tok: Tokenizer, tower: TextTower
) -> ClassEmbeddingBank:
    """One unit embedding per class from its caption, rows in class-id order."""
    class_ids = tuple(sorted(captions.captions))
    if not class_ids:
        raise DataError("caption set is empty")
    rows = [encode_text(tokenize(captions.captions[cid], tok), tower) for cid in class_ids]
    by_caption: dict[str, int] = {}
    collisions = []
    for cid in class_ids:
        text = captions.captions[cid]
        if text in by_caption:
            collisions.append((by_caption[text], cid))
        else:
            by_caption[text] = cid
    return ClassEmbeddingBank(
        matrix=np.stack(rows),
        class_ids=class_ids,
        caption_set_digest=sha256_hex(captions.to_json().encode("utf-8")),
        collisions=tuple(collisions),
    )


def classify(image_embedding: np.ndarray, bank: ClassEmbeddingBank, k: int) -> list[int]:
    """Top-k class ids by cosine similarity; ties broken by ascending class id."""
    if not 1 <= k <= len(bank.class_ids):
        raise DataError(f"k={k} outside [1, {len(bank.class_ids)}]")
    v = np.asarray(image_embedding, dtype=np.float64)
    if v.shape != (bank.matrix.shape[1],):
        raise DataError(f"query dimension {v.shape} does not match bank {bank.matrix.shape[1]}")
    sims = bank.matrix @ v
    class_ids = np.asarray(bank.class_ids)
    order = np.lexsort((class_ids, -sims))
    return [int(class_ids[i]) for i in order[:k]]


def evaluate(
    samples: Sequence[Sample],
    image_tower: ImageTower,
    bank: ClassEmbeddingBank,
    ks: Sequence[int] = (1, 5),
) -> EvalReport:
    """Top-k accuracy of nearest-caption classification over a labeled holdout."""
    if not samples:
        raise DataError("evaluation set is empty")
    known = set(bank.class_ids)
    k_max = min(max(ks), len(bank.class_ids))
    hits = {k: 0 for k in ks}
    per_class_hits: dict[int, int] = {}
    per_class_total: dict[int, int] = {}
    for sample in samples:
        label = sample.meta.get("class_id")
        if label not in known:
            raise DataError(f"sample {sample.key} label {label!r} is not in the class bank")
        emb = encode_image(_sample_pixels(sample), image_tower)
        ranked = classify(emb, bank, k_max)
        for k in ks:
            if label in ranked[: min(k, k_max)]:
                hits[k] += 1
        per_class_total[label] = per_class_total.get(label, 0) + 1
        per_class_hits[label] = per_class_hits.get(label, 0) + (1 if ranked[0] == label else 0)
    n = len(samples)
    per_class = {
        cid: 100.0 * per_class_hits[cid] / per_class_total[cid] for cid in per_class_total
    }
    accuracy = {k: 100.0 * hits[k] / n for k in hits}
    return EvalReport(
        top1=accuracy.get(1, accuracy[min(accuracy)]),
        top5=accuracy.get(5, accuracy[max(accuracy)]),
        n_images=n,
        per_class_top1=per_class,
        bank_digest=bank.digest(),
        collisions=[list(pair) for pair in bank.collisions],
    )
