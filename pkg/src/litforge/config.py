"""Pipeline configuration: JSON in, dataclasses out, unknown keys rejected."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .captions import CaptionTemplate
from .errors import ConfigError, DataError
from .hashing import stable_json_dumps
from .shards import ShardSpec
from .synth import SynthSpec
from .trainer import TrainConfig


@dataclass(frozen=True)
class EvalOptions:
    ks: tuple[int, ...] = (1, 5)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    out_dir: str = "run"
    synth: SynthSpec = field(default_factory=SynthSpec)
    template: CaptionTemplate = field(default_factory=CaptionTemplate)
    shards: ShardSpec = field(default_factory=ShardSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)
    max_caption_columns: int = 4

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["eval"]["ks"] = list(self.eval.ks)
        return doc

    def echo_json(self) -> str:
        return stable_json_dumps(self.to_dict())


_SECTIONS = {
    "synth": SynthSpec,
    "template": CaptionTemplate,
    "shards": ShardSpec,
    "train": TrainConfig,
    "eval": EvalOptions,
}


def _build_section(cls, doc: dict, section: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown keys in config section {section!r}: {sorted(unknown)}")
    if cls is EvalOptions and "ks" in doc:
        doc = {**doc, "ks": tuple(doc["ks"])}
    try:
        return cls(**doc)
    except ConfigError:
        raise
    except (TypeError, ValueError, DataError) as exc:
        raise ConfigError(f"bad config section {section!r}: {exc}") from exc


def load_pipeline_config(path: str | Path | None, overrides: dict | None = None) -> PipelineConfig:
    """Build a PipelineConfig from a JSON file plus flat CLI overrides.

    Overrides (seed, warmup, peak_lr, batch_size, out) are applied after the
    file; the global seed propagates into sections that default to seed 0.
    """
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("pipeline config must be a JSON object")
    top_known = {"seed", "out_dir", "max_caption_columns", *_SECTIONS}
    unknown = set(doc) - top_known
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")

    overrides = overrides or {}
    seed = overrides.get("seed", doc.get("seed", 0))
    if not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")

    sections = {}
    for name, cls in _SECTIONS.items():
        body = dict(doc.get(name, {}))
        if name in ("synth", "train") and "seed" not in body:
            body["seed"] = seed
        sections[name] = _build_section(cls, body, name)

    train_cfg: TrainConfig = sections["train"]
    train_updates = {}
    if "warmup" in overrides:
        train_updates["warmup_steps"] = overrides["warmup"]
    if "peak_lr" in overrides:
        train_updates["peak_lr"] = overrides["peak_lr"]
    if "batch_size" in overrides:
        train_updates["batch_size"] = overrides["batch_size"]
    if train_updates:
        try:
            train_cfg = dataclasses.replace(train_cfg, **train_updates)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        sections["train"] = train_cfg

    return PipelineConfig(
        seed=seed,
        out_dir=str(overrides.get("out", doc.get("out_dir", "run"))),
        max_caption_columns=doc.get("max_caption_columns", 4),
        synth=sections["synth"],
        template=sections["template"],
        shards=sections["shards"],
        train=sections["train"],
        eval=sections["eval"],
    )
