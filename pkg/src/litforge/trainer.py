"""Locked-image text tuning at desk scale.

Only the text tower is optimized; the image tower is a frozen projection
whose parameter digest must be bit-identical before and after training.
The learning rate follows linear warm-up to peak_lr over warmup_steps,
then cosine decay to zero over the remaining steps.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .hashing import sha256_hex
from .model import (
    ImageTower,
    TextTower,
    Tokenizer,
    build_tokenizer,
    contrastive_loss,
    text_backward,
    text_forward,
    tokenize,
)
from .shards import Sample
from .synth import decode_pgm


@dataclass(frozen=True)
class TrainConfig:
    peak_lr: float = 0.05
    warmup_steps: int = 100
    total_steps: int = 2000
    batch_size: int = 32
    temperature: float = 0.07
    d_model: int = 64
    d_embed: int = 64
    seed: int = 0
    optimizer: str = "sgd"  # sgd | adam
    init_scale: float = 0.001
    max_tokens: int = 64
    # divergence predicate: loss above divergence_factor * initial loss
    # (or non-finite) for divergence_window consecutive steps
    divergence_factor: float = 1.0
    divergence_window: int = 50

    def __post_init__(self):
        if self.warmup_steps < 0:
            raise ConfigError(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if self.total_steps <= self.warmup_steps:
            raise ConfigError(
                f"total_steps ({self.total_steps}) must exceed warmup_steps ({self.warmup_steps})"
            )
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warm-up then cosine decay; warmup_steps == 0 starts at peak."""
    if not 0 <= step < cfg.total_steps:
        raise ConfigError(f"step {step} outside [0, {cfg.total_steps})")
    w = cfg.warmup_steps
    if step < w:
        return cfg.peak_lr * (step + 1) / w
    return 0.5 * cfg.peak_lr * (1.0 + math.cos(math.pi * (step - w) / (cfg.total_steps - w)))


class _Adam:
    """Adam with the standard defaults (b1=0.9, b2=0.999, eps=1e-8)."""

    def __init__(self, shapes: Sequence[tuple[int, ...]]):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p -= lr * m_hat / (np.sqrt(v_hat) + eps)


class _Sgd:
    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        for p, g in zip(params, grads):
            p -= lr * g


@dataclass
class MetricsRow:
    step: int
    epoch: int
    lr: float
    loss: float
    wall_ms: float


@dataclass
class TrainState:
    config: TrainConfig
    tokenizer: Tokenizer
    text_tower: TextTower
    image_tower: ImageTower
    step: int = 0
    metrics: list[MetricsRow] = field(default_factory=list)
    initial_loss: Optional[float] = None
    diverged: bool = False
    divergence_step: Optional[int] = None
    image_tower_digest_initial: str = ""

    @property
    def final_loss(self) -> Optional[float]:
        return self.metrics[-1].loss if self.metrics else None

    def divergence_report(self) -> dict:
        return {
            "diverged": self.diverged,
            "step": self.divergence_step,
            "initial_loss": self.initial_loss,
            "last_loss": self.final_loss,
            "predicate": {
                "factor": self.config.divergence_factor,
                "window": self.config.divergence_window,
            },
        }


def metrics_csv(rows: Sequence[MetricsRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["step", "epoch", "lr", "loss", "wall_ms"])
    for row in rows:
        writer.writerow([row.step, row.epoch, f"{row.lr:.12g}", f"{row.loss:.12g}", f"{row.wall_ms:.3f}"])
    return buf.getvalue()


def _sample_pixels(sample: Sample) -> np.ndarray:
    return decode_pgm(sample.image_bytes).astype(np.float64).ravel() / 255.0


def prepare_towers(
    cfg: TrainConfig, n_pixels: int, tokenizer: Tokenizer
) -> tuple[TextTower, ImageTower]:
    text_tower = TextTower.init(
        tokenizer.table_size, cfg.d_model, cfg.d_embed, cfg.seed, cfg.init_scale
    )
    image_tower = ImageTower.init(n_pixels, cfg.d_embed, cfg.seed)
    return text_tower, image_tower


def train(
    cfg: TrainConfig,
    samples: Sequence[Sample],
    tokenizer: Optional[Tokenizer] = None,
    text_tower: Optional[TextTower] = None,
    image_tower: Optional[ImageTower] = None,
) -> TrainState:
    """Run total_steps of text-tower optimization over the sample set.

    Deterministic for a fixed config: batch composition is a permutation
    seeded by (cfg.seed, epoch). Divergence aborts the loop and is recorded
    on the returned state rather than raised, so callers can inspect it.
    """
    samples = sorted(samples, key=lambda s: s.key)
    if not samples:
        raise DataError("training set is empty")
    if len(samples) < cfg.batch_size:
        raise DataError(
            f"training set of {len(samples)} samples cannot fill a batch of {cfg.batch_size}"
        )
    if tokenizer is None:
        tokenizer = build_tokenizer((s.caption for s in samples), cfg.max_tokens)

    pixels = np.stack([_sample_pixels(s) for s in samples])
    token_ids = [tokenize(s.caption, tokenizer) for s in samples]

    if text_tower is None or image_tower is None:
        text_tower, image_tower = prepare_towers(cfg, pixels.shape[1], tokenizer)

    from .model import encode_image  # local alias keeps module import order simple

    image_embeddings = encode_image(pixels, image_tower)

    state = TrainState(
        config=cfg,
        tokenizer=tokenizer,
        text_tower=text_tower,
        image_tower=image_tower,
        image_tower_digest_initial=image_tower.digest(),
    )

    optimizer = _Adam([text_tower.embedding.shape, text_tower.projection.shape]) \
        if cfg.optimizer == "adam" else _Sgd()

    n = len(samples)
    batches_per_epoch = n // cfg.batch_size
    bad_streak = 0
    step = 0
    epoch = -1
    order: np.ndarray = np.empty(0, dtype=np.int64)
    t0 = time.monotonic()
    while step < cfg.total_steps:
        batch_in_epoch = step % batches_per_epoch
        if batch_in_epoch == 0:
            epoch += 1
            order = np.random.default_rng([cfg.seed, 303, epoch]).permutation(n)
        idx = order[batch_in_epoch * cfg.batch_size : (batch_in_epoch + 1) * cfg.batch_size]

        cache = text_forward([token_ids[i] for i in idx], text_tower)
        loss, grad_text = contrastive_loss(
            image_embeddings[idx], cache.embeddings, cfg.temperature
        )
        if state.initial_loss is None:
            state.initial_loss = loss

        lr = lr_at(step, cfg)
        grad_embedding, grad_projection = text_backward(text_tower, cache, grad_text)
        optimizer.step(
            [text_tower.embedding, text_tower.projection],
            [grad_embedding, grad_projection],
            lr,
        )

        state.metrics.append(
            MetricsRow(
                step=step,
                epoch=epoch,
                lr=lr,
                loss=loss,
                wall_ms=(time.monotonic() - t0) * 1000.0,
            )
        )
        step += 1
        state.step = step

        bad = (not math.isfinite(loss)) or loss > cfg.divergence_factor * state.initial_loss
        bad_streak = bad_streak + 1 if bad else 0
        if bad_streak >= cfg.divergence_window:
            state.diverged = True
            state.divergence_step = step - 1
            break
    return state


def grad_check(
    tower: TextTower,
    batch_ids: Sequence[Sequence[int]],
    image_embeddings: np.ndarray,
    temperature: float,
    epsilon: float = 1e-5,
) -> float:
    """Max relative error of analytic vs central-finite-difference gradients
    over every text-tower parameter."""
    cache = text_forward(batch_ids, tower)
    _, grad_text = contrastive_loss(image_embeddings, cache.embeddings, temperature)
    grad_embedding, grad_projection = text_backward(tower, cache, grad_text)
    analytic = np.concatenate([grad_embedding.ravel(), grad_projection.ravel()])

    flat = tower.flat_params()
    numeric = np.empty_like(flat)
    probe = TextTower(embedding=tower.embedding.copy(), projection=tower.projection.copy())

    def loss_at(params: np.ndarray) -> float:
        probe.set_flat_params(params)
        fwd = text_forward(batch_ids, probe)
        loss, _ = contrastive_loss(image_embeddings, fwd.embeddings, temperature)
        return loss

    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + epsilon
        up = loss_at(bumped)
        bumped[i] = flat[i] - epsilon
        down = loss_at(bumped)
        numeric[i] = (up - down) / (2 * epsilon)

    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    doc = {
        "config": state.config.to_dict(),
        "tokenizer": {
            "vocab": state.tokenizer.vocab,
            "unk_id": state.tokenizer.unk_id,
            "pad_id": state.tokenizer.pad_id,
            "max_tokens": state.tokenizer.max_tokens,
        },
        "text_tower": {
            "embedding": state.text_tower.embedding.tolist(),
            "projection": state.text_tower.projection.tolist(),
        },
        "image_tower": {
            "projection": state.image_tower.projection.tolist(),
            "digest": state.image_tower.digest(),
        },
        "step": state.step,
        "diverged": state.diverged,
        "initial_loss": state.initial_loss,
        "final_loss": state.final_loss,
        "image_tower_digest_initial": state.image_tower_digest_initial,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> TrainState:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    cfg = TrainConfig(**doc["config"])
    tokenizer = Tokenizer(
        vocab=doc["tokenizer"]["vocab"],
        unk_id=doc["tokenizer"]["unk_id"],
        pad_id=doc["tokenizer"]["pad_id"],
        max_tokens=doc["tokenizer"]["max_tokens"],
    )
    text_tower = TextTower(
        embedding=np.array(doc["text_tower"]["embedding"], dtype=np.float64),
        projection=np.array(doc["text_tower"]["projection"], dtype=np.float64),
    )
    image_tower = ImageTower(
        projection=np.array(doc["image_tower"]["projection"], dtype=np.float64)
    )
    state = TrainState(
        config=cfg,
        tokenizer=tokenizer,
        text_tower=text_tower,
        image_tower=image_tower,
        step=doc["step"],
        diverged=doc["diverged"],
        initial_loss=doc["initial_loss"],
        image_tower_digest_initial=doc["image_tower_digest_initial"],
    )
    return state
