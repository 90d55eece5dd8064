"""Acceptance gate: one test per criterion, one printed pass/fail line each.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines
as they are emitted; without -s pytest shows them in the captured output.
"""

import json
import math
import time
from contextlib import contextmanager

import numpy as np
import tarfile

from litforge.captions import (
    distinctness_score,
    exhaustive_best_distinctness,
    generate_caption_set,
    select_columns,
)
from litforge.cli import EXIT_OK, main
from litforge.metadata import build_table
from litforge.model import (
    ImageTower,
    TextTower,
    build_tokenizer,
    contrastive_loss,
    encode_image,
    tokenize,
)
from litforge.shards import Sample, ShardSpec, read_shards, save_manifest, write_shards
from litforge.synth import decode_pgm, encode_pgm
from litforge.trainer import TrainConfig, grad_check, lr_at, train
from litforge.zeroshot import ClassEmbeddingBank, evaluate

from conftest import REFERENCE_CAPTIONS


@contextmanager
def criterion(number, title):
    try:
        yield
    except BaseException:
        print(f"\n[criterion {number:2d}] FAIL  {title}")
        raise
    print(f"\n[criterion {number:2d}] PASS  {title}")


# --- 1. caption golden ------------------------------------------------------


def test_criterion_1_caption_golden(tmp_path, reference_csv_path):
    with criterion(1, "six reference captions reproduced byte-exactly in < 1 s"):
        start = time.perf_counter()
        rc = main(
            [
                "caption",
                "--table",
                str(reference_csv_path),
                "--columns",
                "common_name,supercategory,binomial",
                "--out",
                str(tmp_path),
            ]
        )
        elapsed = time.perf_counter() - start
        assert rc == EXIT_OK
        doc = json.loads((tmp_path / "captions.json").read_text(encoding="utf-8"))
        rendered = [doc["captions"][str(i)] for i in range(6)]
        assert all(
            a.encode("utf-8") == b.encode("utf-8")
            for a, b in zip(rendered, REFERENCE_CAPTIONS)
        )
        assert len(rendered) == len(REFERENCE_CAPTIONS)
        assert elapsed < 1.0


# --- 2. column-selection oracle ---------------------------------------------


def _random_table(rng):
    n_classes = int(rng.integers(2, 65))
    n_cols = int(rng.integers(1, 7))
    names = [f"col{j}" for j in range(n_cols)]
    distinct_col = int(rng.integers(n_cols)) if rng.random() < 0.5 else None
    rows = []
    for cid in range(n_classes):
        values = []
        for j in range(n_cols):
            if j == distinct_col:
                values.append(f"unique{cid}")
            else:
                values.append(f"v{int(rng.integers(1, 5))}")
        rows.append((cid, values))
    return build_table(rows, names, source_digest="t"), distinct_col is not None


def test_criterion_2_selection_oracle():
    with criterion(2, "greedy matches exhaustive oracle; monotonicity on 50 tables"):
        start = time.perf_counter()
        rng = np.random.default_rng(2024)
        for _ in range(50):
            table, has_distinct_single = _random_table(rng)
            greedy = select_columns(table, max_columns=len(table.column_names))
            if has_distinct_single:
                oracle = exhaustive_best_distinctness(table, len(table.column_names))
                assert greedy.distinctness == oracle == table.num_classes
            # monotonicity: growing a subset never lowers distinctness
            cols = list(table.column_names)
            rng.shuffle(cols)
            for size in range(1, len(cols)):
                smaller = distinctness_score(table, cols[:size])
                larger = distinctness_score(table, cols[: size + 1])
                assert larger >= smaller
        assert time.perf_counter() - start < 10.0


# --- 3. shard conformance ---------------------------------------------------


def test_criterion_3_shard_conformance(tmp_path):
    with criterion(3, "1,000-sample round trip byte-exact; independent tar reader OK"):
        start = time.perf_counter()
        rng = np.random.default_rng(3)
        samples = [
            Sample(
                key=f"{i:09d}",
                image_bytes=encode_pgm(rng.integers(0, 256, (8, 8)).astype(np.uint8)),
                caption=f"A photo of the class {i % 37}",
                meta={"class_id": i % 37, "index": i},
            )
            for i in range(1000)
        ]
        manifest = write_shards(samples, ShardSpec(samples_per_shard=128), tmp_path)
        save_manifest(manifest, tmp_path / "manifest.json")
        back = read_shards(tmp_path / "manifest.json")
        assert back == sorted(samples, key=lambda s: s.key)
        total = 0
        for entry in manifest.shards:
            with tarfile.open(manifest.shard_path(entry)) as tf:  # stdlib reader
                total += len(tf.getnames())
        assert total == 3 * 1000
        assert time.perf_counter() - start < 10.0


# --- 4. loss sanity ---------------------------------------------------------


def test_criterion_4_loss_sanity():
    with criterion(4, "loss: B=1 zero, B=2 closed form, B=64 near ln 64"):
        u1 = np.array([[1.0, 0.0]])
        assert contrastive_loss(u1, u1, temperature=1.0)[0] == 0.0
        e = np.eye(2)
        loss2, _ = contrastive_loss(e, e, temperature=1.0)
        assert abs(loss2 - math.log(1 + math.exp(-1))) < 1e-9
        losses = []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            u = rng.normal(size=(64, 64))
            v = rng.normal(size=(64, 64))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            losses.append(contrastive_loss(u, v, temperature=1.0)[0])
        assert abs(float(np.mean(losses)) - math.log(64)) < 0.15


# --- 5. gradient check ------------------------------------------------------


def test_criterion_5_grad_check():
    with criterion(5, "analytic gradients within 1e-4 of central differences"):
        tok = build_tokenizer(REFERENCE_CAPTIONS)
        tower = TextTower.init(tok.table_size, d_model=8, d_embed=8, seed=0, scale=0.1)
        batch_ids = [tokenize(c, tok) for c in REFERENCE_CAPTIONS[:4]]
        rng = np.random.default_rng(0)
        u = rng.normal(size=(4, 8))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        for tau in (0.07, 1.0):
            assert grad_check(tower, batch_ids, u, tau, epsilon=1e-5) <= 1e-4


# --- 6. lock invariant ------------------------------------------------------


def test_criterion_6_lock_invariant(trained_state):
    with criterion(6, "image-tower digest unchanged after full 2,000-step run"):
        assert trained_state.step == 2000
        assert trained_state.image_tower.digest() == trained_state.image_tower_digest_initial


# --- 7. schedule exactness --------------------------------------------------


def test_criterion_7_schedule_exactness():
    with criterion(7, "lr schedule matches the closed form at every step"):
        for w in (500, 1000, 2000):
            cfg = TrainConfig(peak_lr=0.01, warmup_steps=w, total_steps=4 * w)
            assert lr_at(w - 1, cfg) == cfg.peak_lr
            for step in range(cfg.total_steps):
                if step < w:
                    expected = cfg.peak_lr * (step + 1) / w
                else:
                    expected = 0.5 * cfg.peak_lr * (
                        1 + math.cos(math.pi * (step - w) / (3 * w))
                    )
                assert abs(lr_at(step, cfg) - expected) <= 1e-12


# --- 8. end-to-end run ------------------------------------------------------


def test_criterion_8_end_to_end(tmp_path):
    with criterion(8, "default pipeline: top-1 >= 90%, top-5 = 100%, deterministic, < 2 min"):
        cfg_path = tmp_path / "default.json"
        cfg_path.write_text("{}", encoding="utf-8")
        start = time.perf_counter()
        reports = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert main(["pipeline", "--config", str(cfg_path), "--out", str(out)]) == EXIT_OK
            reports.append((out / "eval_report.json").read_bytes())
        elapsed = time.perf_counter() - start
        doc = json.loads(reports[0])
        assert doc["top1"] >= 90.0
        assert doc["top5"] == 100.0
        assert reports[0] == reports[1]
        assert elapsed < 120.0


# --- 9. warm-up ablation shape ----------------------------------------------


def test_criterion_9_warmup_ablation(synth_corpus):
    with criterion(9, "peak_lr=5.0: W=0 diverges, W=100 converges"):
        _, _, _, train_samples, _ = synth_corpus
        cold = train(TrainConfig(peak_lr=5.0, warmup_steps=0, total_steps=2000), train_samples)
        assert cold.diverged
        warm = train(TrainConfig(peak_lr=5.0, warmup_steps=100, total_steps=2000), train_samples)
        assert not warm.diverged
        assert warm.final_loss < 0.5 * warm.initial_loss


# --- 10. evaluator oracle ---------------------------------------------------


def _brute_force_topk(embeddings, bank, labels, k):
    hits = 0
    for emb, label in zip(embeddings, labels):
        sims = bank.matrix @ emb
        order = sorted(range(len(sims)), key=lambda i: (-sims[i], bank.class_ids[i]))
        hits += label in [bank.class_ids[i] for i in order[:k]]
    return 100.0 * hits / len(labels)


def test_criterion_10_evaluator_oracle():
    with criterion(10, "evaluate agrees with brute-force oracle on 20 random instances"):
        rng = np.random.default_rng(10)
        side = 4
        for trial in range(20):
            n_classes = int(rng.integers(2, 65))
            n_images = int(rng.integers(1, 1001))
            dim = int(rng.integers(3, 17))
            tower = ImageTower.init(side * side, dim, seed=trial)
            matrix = rng.normal(size=(n_classes, dim))
            matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
            bank = ClassEmbeddingBank(
                matrix=matrix, class_ids=tuple(range(n_classes)), caption_set_digest="d"
            )
            samples, labels, embeddings = [], [], []
            for i in range(n_images):
                pixels = rng.integers(1, 255, (side, side))
                label = int(rng.integers(n_classes))
                samples.append(
                    Sample(
                        key=f"{i:09d}",
                        image_bytes=encode_pgm(pixels.astype(np.uint8)),
                        caption="c",
                        meta={"class_id": label, "split": "holdout"},
                    )
                )
                labels.append(label)
                embeddings.append(encode_image(pixels.astype(float).ravel() / 255.0, tower))
            report = evaluate(samples, tower, bank)
            assert report.top1 == _brute_force_topk(embeddings, bank, labels, 1)
            k5 = min(5, n_classes)
            assert report.top5 == _brute_force_topk(embeddings, bank, labels, k5)
