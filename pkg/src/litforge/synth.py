"""Desk-scale synthetic stand-in for a fine-grained species dataset.

Generates a taxonomy metadata table (common name, supercategory, binomial,
description) and class-conditional images: a seeded uniform-random prototype
pixel grid per class plus independent Gaussian noise per image, encoded as
binary PGM. All randomness derives from (seed, class_id[, image index]) so
regeneration is bit-identical regardless of generation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .captions import CaptionSet, CaptionTemplate, generate_caption_set
from .errors import ConfigError, DataError
from .hashing import sha256_hex
from .metadata import MetadataTable, build_table, to_csv
from .shards import Sample

SUPERCATEGORY_POOL = ("Animalia", "Insects", "Birds", "Fungi")

_GENUS_SYLLABLES = ("lepto", "macro", "pseudo", "chloro", "xantho", "melano", "brachy", "poly")
_SPECIES_SYLLABLES = ("rus", "lis", "tum", "phora", "ceps", "don", "gaster", "pes")
_ADJECTIVES = ("Crested", "Spotted", "Lesser", "Golden", "Dusky", "Banded", "Pale", "Violet")
_NOUNS = ("Darter", "Moth", "Wren", "Lichen", "Urchin", "Beetle", "Finch", "Polypore")


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 16
    images_per_class: int = 50
    image_side: int = 16
    noise_sigma: float = 8.0
    seed: int = 0
    holdout_fraction: float = 0.2

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.holdout_fraction > 0 and self.images_per_class < 2:
            raise ConfigError("images_per_class must be >= 2 when a holdout split is requested")
        if not 0 <= self.holdout_fraction < 1:
            raise ConfigError(f"holdout_fraction must be in [0, 1), got {self.holdout_fraction}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if self.image_side < 1:
            raise ConfigError(f"image_side must be >= 1, got {self.image_side}")


def _binomial(class_id: int, rng: np.random.Generator) -> str:
    # species epithet encodes the class id in syllables, so binomials are
    # unique by construction even when genus names collide
    genus = _GENUS_SYLLABLES[rng.integers(len(_GENUS_SYLLABLES))].capitalize()
    n = len(_SPECIES_SYLLABLES)
    digits = []
    value = class_id
    while True:
        digits.append(value % n)
        value //= n
        if value == 0:
            break
    epithet = "".join(_SPECIES_SYLLABLES[d] for d in reversed(digits))
    return f"{genus} {epithet}"


def generate_taxonomy(spec: SynthSpec) -> MetadataTable:
    """Synthesize the per-class metadata table.

    Supercategories come from a 4-entry pool, so that column alone is never
    fully distinct once num_classes exceeds the pool size.
    """
    rows = []
    for class_id in range(spec.num_classes):
        rng = np.random.default_rng([spec.seed, class_id, 0])
        supercategory = SUPERCATEGORY_POOL[class_id % len(SUPERCATEGORY_POOL)]
        common_name = (
            f"{_ADJECTIVES[rng.integers(len(_ADJECTIVES))]} "
            f"{_NOUNS[rng.integers(len(_NOUNS))]}"
        )
        binomial = _binomial(class_id, rng)
        description = f"a small organism with {_ADJECTIVES[rng.integers(len(_ADJECTIVES))].lower()} markings"
        rows.append((class_id, [common_name, supercategory, binomial, description]))
    column_names = ["common_name", "supercategory", "binomial", "description"]
    # digest over the canonical CSV serialization: there is no source file
    table = build_table(rows, column_names, source_digest="")
    digest = sha256_hex(to_csv(table).encode("utf-8"))
    return build_table(rows, column_names, source_digest=digest)


def encode_pgm(pixels: np.ndarray) -> bytes:
    """Binary PGM (P5, maxval 255) encoding of a 2-D uint8 array."""
    if pixels.dtype != np.uint8 or pixels.ndim != 2:
        raise DataError("PGM encoding expects a 2-D uint8 array")
    height, width = pixels.shape
    return b"P5\n%d %d\n255\n" % (width, height) + pixels.tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise DataError("not a binary maxval-255 PGM payload")
    width, height = (int(x) for x in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=width * height)
    return pixels.reshape(height, width)


def class_prototype(spec: SynthSpec, class_id: int) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, class_id, 1])
    return rng.integers(0, 256, size=(spec.image_side, spec.image_side)).astype(np.float64)


def generate_images(
    spec: SynthSpec,
    table: MetadataTable,
    caption_set: Optional[CaptionSet] = None,
    template: CaptionTemplate = CaptionTemplate(),
) -> tuple[list[Sample], list[Sample]]:
    """Render (train, holdout) samples with captions attached.

    Per class: images 0..h-1 go to holdout, the rest to train, where
    h = round(images_per_class * holdout_fraction); stratification keeps
    every class in both splits whenever holdout_fraction > 0.
    """
    if table.num_classes != spec.num_classes:
        raise DataError(
            f"table has {table.num_classes} classes but spec declares {spec.num_classes}"
        )
    if caption_set is None:
        caption_set = generate_caption_set(table, template)
    n_holdout = int(round(spec.images_per_class * spec.holdout_fraction))
    if spec.holdout_fraction > 0:
        n_holdout = min(max(n_holdout, 1), spec.images_per_class - 1)

    train: list[Sample] = []
    holdout: list[Sample] = []
    key_counter = 0
    for record in table.records:
        class_id = record.class_id
        proto = class_prototype(spec, class_id)
        caption = caption_set.captions[class_id]
        for image_idx in range(spec.images_per_class):
            rng = np.random.default_rng([spec.seed, class_id, 2, image_idx])
            noise = rng.normal(0.0, spec.noise_sigma, size=proto.shape)
            pixels = np.clip(np.rint(proto + noise), 0, 255).astype(np.uint8)
            split = "holdout" if image_idx < n_holdout else "train"
            sample = Sample(
                key=f"{key_counter:09d}",
                image_bytes=encode_pgm(pixels),
                caption=caption,
                meta={
                    "class_id": class_id,
                    "columns": {name: value for name, value in record.columns},
                    "split": split,
                },
            )
            key_counter += 1
            (holdout if split == "holdout" else train).append(sample)
    return train, holdout
