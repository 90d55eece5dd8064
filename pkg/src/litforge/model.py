"""Toy two-tower model: frozen linear image tower, trainable bag-of-words
text tower, symmetric InfoNCE loss.

All math is float64. The text tower is embedding lookup -> mean pool ->
linear projection -> L2 normalization; gradients are derived by hand so
they can be validated against central finite differences.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .hashing import sha256_hex

_TOKEN_RE = re.compile(r"[0-9a-z]+")


@dataclass(frozen=True)
class Tokenizer:
    vocab: dict[str, int]
    unk_id: int
    pad_id: int
    max_tokens: int = 64

    @property
    def table_size(self) -> int:
        # embedding rows: vocabulary plus unk and pad
        return len(self.vocab) + 2


def build_tokenizer(captions: Iterable[str], max_tokens: int = 64) -> Tokenizer:
    """Vocabulary from the training captions only; ids dense from 0."""
    words = sorted({w for caption in captions for w in _TOKEN_RE.findall(caption.lower())})
    vocab = {word: i for i, word in enumerate(words)}
    return Tokenizer(vocab=vocab, unk_id=len(vocab), pad_id=len(vocab) + 1, max_tokens=max_tokens)


def tokenize(caption: str, tok: Tokenizer) -> list[int]:
    """Lowercase, split on whitespace/punctuation, truncate, map unknowns."""
    words = _TOKEN_RE.findall(caption.lower())[: tok.max_tokens]
    if not words:
        return [tok.unk_id]
    return [tok.vocab.get(w, tok.unk_id) for w in words]


@dataclass
class TextTower:
    embedding: np.ndarray  # (table_size, d_model)
    projection: np.ndarray  # (d_model, d_embed)

    @staticmethod
    def init(table_size: int, d_model: int, d_embed: int, seed: int, scale: float = 0.001) -> "TextTower":
        rng = np.random.default_rng([seed, 101])
        return TextTower(
            embedding=rng.normal(0.0, scale, size=(table_size, d_model)),
            projection=rng.normal(0.0, scale, size=(d_model, d_embed)),
        )

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.embedding.ravel(), self.projection.ravel()])

    def set_flat_params(self, flat: np.ndarray) -> None:
        n_emb = self.embedding.size
        self.embedding = flat[:n_emb].reshape(self.embedding.shape).copy()
        self.projection = flat[n_emb:].reshape(self.projection.shape).copy()


@dataclass(frozen=True)
class ImageTower:
    """Frozen random linear projection standing in for a pretrained backbone."""

    projection: np.ndarray  # (n_pixels, d_embed), never updated

    @staticmethod
    def init(n_pixels: int, d_embed: int, seed: int) -> "ImageTower":
        rng = np.random.default_rng([seed, 202])
        tower = ImageTower(projection=rng.normal(0.0, 1.0, size=(n_pixels, d_embed)))
        tower.projection.setflags(write=False)
        return tower

    def digest(self) -> str:
        return sha256_hex(self.projection.tobytes())


def _normalize_rows(raw: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(raw, axis=-1, keepdims=True)
    if not np.all(np.isfinite(raw)) or np.any(norms == 0.0):
        raise DataError(f"cannot L2-normalize {what}: zero or non-finite vector")
    return raw / norms


def encode_image(pixels: np.ndarray, tower: ImageTower) -> np.ndarray:
    """Project flattened pixels and L2-normalize. Accepts one vector or a batch."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.shape[-1] != tower.projection.shape[0]:
        raise DataError(
            f"pixel count {pixels.shape[-1]} does not match tower input {tower.projection.shape[0]}"
        )
    return _normalize_rows(pixels @ tower.projection, "image embedding")


@dataclass
class TextForward:
    """Intermediates cached for the backward pass."""

    ids: list[list[int]]
    pooled: np.ndarray  # (B, d_model)
    projected: np.ndarray  # (B, d_embed), pre-normalization
    embeddings: np.ndarray  # (B, d_embed), unit rows


def text_forward(batch_ids: Sequence[Sequence[int]], tower: TextTower) -> TextForward:
    table_size, d_model = tower.embedding.shape
    pooled = np.empty((len(batch_ids), d_model))
    for i, ids in enumerate(batch_ids):
        if not ids:
            raise DataError("cannot encode an empty token id sequence")
        if max(ids) >= table_size or min(ids) < 0:
            raise DataError(f"token id out of vocabulary range [0, {table_size})")
        pooled[i] = tower.embedding[list(ids)].mean(axis=0)
    projected = pooled @ tower.projection
    return TextForward(
        ids=[list(ids) for ids in batch_ids],
        pooled=pooled,
        projected=projected,
        embeddings=_normalize_rows(projected, "text embedding"),
    )


def encode_text(ids: Sequence[int], tower: TextTower) -> np.ndarray:
    return text_forward([ids], tower).embeddings[0]


def text_backward(tower: TextTower, cache: TextForward, grad_embeddings: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the loss w.r.t. (embedding table, projection).

    grad_embeddings is d(loss)/d(normalized output), shape (B, d_embed).
    """
    norms = np.linalg.norm(cache.projected, axis=1, keepdims=True)
    v = cache.embeddings
    # through v = p / ||p||:  dL/dp = (g - (g.v) v) / ||p||
    grad_projected = (grad_embeddings - (grad_embeddings * v).sum(axis=1, keepdims=True) * v) / norms
    grad_projection = cache.pooled.T @ grad_projected
    grad_pooled = grad_projected @ tower.projection.T
    grad_embedding = np.zeros_like(tower.embedding)
    for i, ids in enumerate(cache.ids):
        contribution = grad_pooled[i] / len(ids)
        for token_id in ids:
            grad_embedding[token_id] += contribution
    return grad_embedding, grad_projection


def contrastive_loss(
    image_embeddings: np.ndarray, text_embeddings: np.ndarray, temperature: float
) -> tuple[float, np.ndarray]:
    """Symmetric InfoNCE over unit-norm embeddings.

    logits[i, j] = (U_i . V_j) / temperature; loss is the mean of the
    image->text and text->image cross-entropies with the diagonal as target.
    Returns (loss, d loss / d text_embeddings); the image side is frozen.
    """
    u = np.asarray(image_embeddings, dtype=np.float64)
    v = np.asarray(text_embeddings, dtype=np.float64)
    if u.shape != v.shape:
        raise DataError(f"batch shape mismatch: images {u.shape} vs texts {v.shape}")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise DataError("non-finite embeddings in contrastive loss")
    batch = u.shape[0]
    logits = (u @ v.T) / temperature

    # row-wise (image -> text) softmax
    row = logits - logits.max(axis=1, keepdims=True)
    row_exp = np.exp(row)
    row_p = row_exp / row_exp.sum(axis=1, keepdims=True)
    # column-wise (text -> image) softmax
    col = logits - logits.max(axis=0, keepdims=True)
    col_exp = np.exp(col)
    col_p = col_exp / col_exp.sum(axis=0, keepdims=True)

    diag = np.arange(batch)
    loss = 0.5 * (
        -np.log(row_p[diag, diag]).mean() - np.log(col_p[diag, diag]).mean()
    )

    grad_logits = 0.5 * (row_p + col_p)
    grad_logits[diag, diag] -= 1.0
    grad_logits /= batch
    grad_text = grad_logits.T @ u / temperature
    return float(loss), grad_text
