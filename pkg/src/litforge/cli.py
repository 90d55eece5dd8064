"""Subcommand front-end for the caption/shard/train/eval pipeline.

Exit codes: 0 success, 2 config error, 3 data error, 4 training divergence.
Every run writes a resolved-config echo beside its outputs so artifacts can
be re-derived.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import captions as captions_mod
from . import metadata as metadata_mod
from . import shards as shards_mod
from . import synth as synth_mod
from . import trainer as trainer_mod
from . import zeroshot as zeroshot_mod
from .captions import CaptionTemplate
from .config import PipelineConfig, load_pipeline_config
from .errors import ConfigError, DataError, DivergenceError, LitforgeError
from .hashing import stable_json_dumps

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _template_from_args(args) -> CaptionTemplate:
    return CaptionTemplate(prefix=args.prefix, separator=args.separator, suffix=args.suffix)


def _load_table(args) -> metadata_mod.MetadataTable:
    return metadata_mod.load_metadata(args.table, format=args.format)


def cmd_synth(args) -> int:
    cfg = load_pipeline_config(args.config, _overrides(args))
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = synth_mod.generate_taxonomy(cfg.synth)
    caption_set = captions_mod.generate_caption_set(table, cfg.template, cfg.max_caption_columns)
    train, holdout = synth_mod.generate_images(cfg.synth, table, caption_set, cfg.template)
    metadata_mod.save_csv(table, out / "metadata.csv")
    images_dir = out / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    for sample in [*train, *holdout]:
        (images_dir / f"{sample.key}.pgm").write_bytes(sample.image_bytes)
        _write(images_dir / f"{sample.key}.json", json.dumps(sample.meta, sort_keys=True) + "\n")
    _write(out / "config_echo.json", cfg.echo_json())
    print(f"synth: {table.num_classes} classes, {len(train)} train / {len(holdout)} holdout images -> {out}")
    return EXIT_OK


def cmd_aggregate(args) -> int:
    table = _load_table(args)
    findings = metadata_mod.validate_table(table)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metadata_mod.save_csv(table, out / "metadata.csv")
    _write(
        out / "validation_report.json",
        stable_json_dumps(
            {
                "source_digest": table.source_digest,
                "num_classes": table.num_classes,
                "columns": list(table.column_names),
                "findings": [dataclasses.asdict(f) for f in findings],
            }
        ),
    )
    print(f"aggregate: {table.num_classes} classes, {len(findings)} findings -> {out}")
    return EXIT_OK


def cmd_select_columns(args) -> int:
    table = _load_table(args)
    selection = captions_mod.select_columns(
        table, args.max_columns, _template_from_args(args), args.token_budget
    )
    _write(
        Path(args.out) / "selection.json",
        stable_json_dumps(
            {
                "columns": list(selection.columns),
                "distinctness": selection.distinctness,
                "num_classes": table.num_classes,
                "table_digest": selection.table_digest,
            }
        ),
    )
    print(
        f"select-columns: {list(selection.columns)} "
        f"(distinctness {selection.distinctness}/{table.num_classes})"
    )
    return EXIT_OK


def cmd_caption(args) -> int:
    table = _load_table(args)
    columns = args.columns.split(",") if args.columns else None
    caption_set = captions_mod.generate_caption_set(
        table, _template_from_args(args), args.max_columns, args.token_budget, columns
    )
    captions_mod.save_caption_set(caption_set, Path(args.out) / "captions.json")
    for cid in sorted(caption_set.captions):
        print(f"{cid}\t{caption_set.captions[cid]}")
    return EXIT_OK


def _read_image_samples(images_dir: Path, caption_set: captions_mod.CaptionSet) -> list[shards_mod.Sample]:
    samples = []
    for meta_path in sorted(images_dir.glob("*.json")):
        key = meta_path.stem
        image_path = images_dir / f"{key}.pgm"
        if not image_path.exists():
            raise DataError(f"image payload missing for key {key}")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        class_id = meta["class_id"]
        if class_id not in caption_set.captions:
            raise DataError(f"no caption for class {class_id} (key {key})")
        samples.append(
            shards_mod.Sample(
                key=key,
                image_bytes=image_path.read_bytes(),
                caption=caption_set.captions[class_id],
                meta=meta,
            )
        )
    if not samples:
        raise DataError(f"no samples found under {images_dir}")
    return samples


def _write_split_shards(
    samples: Sequence[shards_mod.Sample], spec: shards_mod.ShardSpec, out: Path
) -> dict[str, Optional[shards_mod.ShardManifest]]:
    manifests: dict[str, Optional[shards_mod.ShardManifest]] = {}
    for split in ("train", "holdout"):
        subset = [s for s in samples if s.meta.get("split", "train") == split]
        if not subset:
            manifests[split] = None
            continue
        manifest = shards_mod.write_shards(subset, spec, out / "shards" / split, manifest_base=out)
        shards_mod.save_manifest(manifest, out / f"manifest_{split}.json")
        manifests[split] = manifest
    return manifests


def cmd_shard(args) -> int:
    caption_set = captions_mod.load_caption_set(args.captions)
    samples = _read_image_samples(Path(args.images), caption_set)
    spec = shards_mod.ShardSpec(
        samples_per_shard=args.samples_per_shard,
        shuffle_seed=args.shuffle_seed,
        image_extension="pgm",
    )
    manifests = _write_split_shards(samples, spec, Path(args.out))
    for split, manifest in manifests.items():
        if manifest:
            print(f"shard: {split}: {manifest.total_samples} samples in {len(manifest.shards)} shards")
    return EXIT_OK


def cmd_verify(args) -> int:
    manifest = shards_mod.load_manifest(args.manifest)
    findings = shards_mod.verify_manifest(manifest)
    report = {
        "ok": not findings,
        "findings": [dataclasses.asdict(f) for f in findings],
        "total_samples": manifest.total_samples,
    }
    print(stable_json_dumps(report), end="")
    if args.out:
        _write(Path(args.out) / "verify_report.json", stable_json_dumps(report))
    return EXIT_OK if not findings else EXIT_DATA


def _run_training(cfg: PipelineConfig, samples, out: Path) -> trainer_mod.TrainState:
    state = trainer_mod.train(cfg.train, samples)
    trainer_mod.save_checkpoint(state, out / "checkpoint.json")
    _write(out / "metrics.csv", trainer_mod.metrics_csv(state.metrics))
    if state.diverged:
        _write(out / "divergence_report.json", stable_json_dumps(state.divergence_report()))
    return state


def cmd_train(args) -> int:
    cfg = load_pipeline_config(args.config, _overrides(args))
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = shards_mod.read_shards(args.manifest)
    _write(out / "config_echo.json", cfg.echo_json())
    state = _run_training(cfg, samples, out)
    if state.diverged:
        print(f"train: diverged at step {state.divergence_step}", file=sys.stderr)
        return EXIT_DIVERGENCE
    print(f"train: {state.step} steps, loss {state.initial_loss:.4f} -> {state.final_loss:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    state = trainer_mod.load_checkpoint(args.checkpoint)
    caption_set = captions_mod.load_caption_set(args.captions)
    samples = shards_mod.read_shards(args.manifest)
    bank = zeroshot_mod.build_class_bank(caption_set, state.tokenizer, state.text_tower)
    report = zeroshot_mod.evaluate(samples, state.image_tower, bank)
    report.config = state.config.to_dict()
    out = Path(args.out)
    _write(out / "eval_report.json", report.to_json())
    _write(out / "per_class_top1.csv", report.per_class_csv())
    print(f"eval: top-1 {report.top1:.2f}% top-5 {report.top5:.2f}% over {report.n_images} images")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = load_pipeline_config(args.config, _overrides(args))
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "config_echo.json", cfg.echo_json())

    table = synth_mod.generate_taxonomy(cfg.synth)
    metadata_mod.save_csv(table, out / "metadata.csv")

    caption_set = captions_mod.generate_caption_set(table, cfg.template, cfg.max_caption_columns)
    captions_mod.save_caption_set(caption_set, out / "captions.json")

    train_samples, holdout_samples = synth_mod.generate_images(cfg.synth, table, caption_set, cfg.template)
    manifests = _write_split_shards([*train_samples, *holdout_samples], cfg.shards, out)

    state = _run_training(cfg, train_samples, out)
    if state.diverged:
        print(f"pipeline: training diverged at step {state.divergence_step}", file=sys.stderr)
        return EXIT_DIVERGENCE

    bank = zeroshot_mod.build_class_bank(caption_set, state.tokenizer, state.text_tower)
    report = zeroshot_mod.evaluate(holdout_samples, state.image_tower, bank, cfg.eval.ks)
    report.config = state.config.to_dict()
    _write(out / "eval_report.json", report.to_json())
    _write(out / "per_class_top1.csv", report.per_class_csv())

    emit_run_report(out)
    print(
        f"pipeline: done; top-1 {report.top1:.2f}% top-5 {report.top5:.2f}% "
        f"({manifests['train'].total_samples if manifests['train'] else 0} train samples) -> {out}"
    )
    return EXIT_OK


def emit_run_report(run_dir: str | Path) -> dict:
    """Join the stage artifacts of one run into a single JSON report."""
    run_dir = Path(run_dir)
    required = {
        "config": run_dir / "config_echo.json",
        "manifest_train": run_dir / "manifest_train.json",
        "metrics": run_dir / "metrics.csv",
        "eval_report": run_dir / "eval_report.json",
    }
    for name, path in required.items():
        if not path.exists():
            raise DataError(f"run report: missing {name} artifact at {path}")
    config = json.loads(required["config"].read_text(encoding="utf-8"))
    manifest = shards_mod.load_manifest(required["manifest_train"])
    eval_report = json.loads(required["eval_report"].read_text(encoding="utf-8"))
    metrics_lines = required["metrics"].read_text(encoding="utf-8").strip().splitlines()
    final_loss = float(metrics_lines[-1].split(",")[3]) if len(metrics_lines) > 1 else None
    report = {
        "config": config,
        "warmup_steps": config["train"]["warmup_steps"],
        "peak_lr": config["train"]["peak_lr"],
        "final_loss": final_loss,
        "top1": eval_report["top1"],
        "top5": eval_report["top5"],
        "shard_digests": [s.digest for s in manifest.shards],
        "total_train_samples": manifest.total_samples,
    }
    _write(run_dir / "run_report.json", stable_json_dumps(report))
    return report


def _overrides(args) -> dict:
    overrides = {}
    for name in ("seed", "warmup", "peak_lr", "batch_size", "out"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return overrides


def _add_common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", default=None, help="pipeline config JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--warmup", type=int, default=None, help="warm-up steps override")
    p.add_argument("--peak-lr", dest="peak_lr", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")


def _add_template_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--prefix", default="A photo of the ")
    p.add_argument("--separator", default=" ")
    p.add_argument("--suffix", default="")
    p.add_argument("--max-columns", dest="max_columns", type=int, default=4)
    p.add_argument("--token-budget", dest="token_budget", type=int, default=64)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="litforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic taxonomy and images")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("aggregate", help="canonicalize and validate a metadata table")
    p.add_argument("--table", required=True)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("select-columns", help="choose the caption column subset")
    p.add_argument("--table", required=True)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out", required=True)
    _add_template_flags(p)
    p.set_defaults(func=cmd_select_columns)

    p = sub.add_parser("caption", help="render one caption per class")
    p.add_argument("--table", required=True)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out", required=True)
    p.add_argument(
        "--columns", default=None, help="comma-separated explicit column list, bypassing selection"
    )
    _add_template_flags(p)
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("shard", help="pack images + captions into tar shards")
    p.add_argument("--images", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples-per-shard", dest="samples_per_shard", type=int, default=256)
    p.add_argument("--shuffle-seed", dest="shuffle_seed", type=int, default=None)
    p.set_defaults(func=cmd_shard)

    p = sub.add_parser("verify", help="verify shard digests against a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", help="LiT-tune the text tower on a shard manifest")
    p.add_argument("--manifest", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="zero-shot evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run every stage in order")
    _add_common(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DataError, LitforgeError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
