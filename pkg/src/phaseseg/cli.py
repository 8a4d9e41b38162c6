"""Command-line pipeline: synthesize data, build splits, train folds,
evaluate dumps, merge fold reports, and render qualitative ribbons.

Every command resolves its configuration from an optional JSON file plus
flag overrides, writes the resolved config next to its outputs, and is
deterministic given identical inputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .feature_store import (
    generate_synthetic,
    interpolate_to_full_rate,
    read_cache,
    read_labels,
    read_vocabulary,
    reconcile_lengths,
    write_cache,
    write_labels_csv,
    write_vocabulary,
)
from .metrics import FoldReport, aggregate, render_fold_row, render_study_table, summarize
from .mstcnpp import ModelConfig, save_checkpoint
from .ribbon import write_ribbon
from .splits import DatasetManifest, FoldSpec, ManifestEntry, fold_iter, stratified_kfold
from .training import TrainConfig, dump_predictions, read_predictions, train_fold


def _parse_range(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition(":")
    return (int(lo), int(hi or lo))


def _parse_exclude(text: str | None) -> tuple[int, ...]:
    if not text:
        return ()
    return tuple(int(v) for v in text.split(","))


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    config = json.loads(Path(path).read_text())
    unknown = set(config) - {"model", "train"}
    if unknown:
        raise ValueError(f"config file has unknown sections {sorted(unknown)}")
    return config


def _resolve_manifest(args) -> DatasetManifest:
    if getattr(args, "manifest", None):
        return DatasetManifest.load(args.manifest)
    if getattr(args, "features_dir", None) and getattr(args, "labels_dir", None):
        return manifest_from_dirs(args.features_dir, args.labels_dir, getattr(args, "vocab", None))
    raise ValueError("provide --manifest or both --features-dir and --labels-dir")


def manifest_from_dirs(
    features_dir: str | Path, labels_dir: str | Path, vocab_path: str | Path | None = None
) -> DatasetManifest:
    """Pair caches and label files by stem; prefix group = stem up to '_'."""
    features_dir, labels_dir = Path(features_dir), Path(labels_dir)
    entries = []
    for cache in sorted(features_dir.glob("*.psfc")):
        stem = cache.stem
        label = labels_dir / f"{stem}.csv"
        if not label.exists():
            label = labels_dir / f"{stem}.json"
        if not label.exists():
            raise FileNotFoundError(f"no label file for video {stem!r} in {labels_dir}")
        entries.append(ManifestEntry(stem, stem.split("_")[0], str(cache), str(label)))
    if not entries:
        raise FileNotFoundError(f"no .psfc caches found in {features_dir}")
    vocab = str(vocab_path) if vocab_path else str(labels_dir / "vocabulary.json")
    return DatasetManifest(entries=entries, vocabulary_path=vocab)


def load_video(manifest: DatasetManifest, video_id: str, vocabulary: list[str]):
    """Read one (features, labels) pair, interpolating strided caches to the
    label frame count and truncating to the shared length."""
    entry = manifest.entry(video_id)
    feats = read_cache(entry.feature_path)
    labels = read_labels(entry.label_path, vocabulary)
    if feats.stride > 1:
        feats = interpolate_to_full_rate(feats, labels.frame_count)
    return reconcile_lengths(feats, labels)


def _vocabulary(manifest: DatasetManifest) -> list[str]:
    if not manifest.vocabulary_path:
        raise ValueError("manifest does not name a vocabulary file")
    return read_vocabulary(manifest.vocabulary_path)


def cmd_synth(args) -> int:
    out = Path(args.out)
    features_dir = out / "features"
    labels_dir = out / "labels"
    features_dir.mkdir(parents=True, exist_ok=True)
    labels_dir.mkdir(parents=True, exist_ok=True)
    lo, hi = _parse_range(args.frames)
    videos = generate_synthetic(
        args.num_videos,
        (lo, hi),
        args.feat_dim,
        args.classes,
        seed=args.seed,
        min_segment=args.min_segment,
        mean_separation=args.mean_separation,
        noise=args.noise,
    )
    groups = args.groups.split(",")
    entries = []
    vocab_path = out / "vocabulary.json"
    for i, (feats, labels) in enumerate(videos):
        group = groups[i % len(groups)]
        video_id = f"{group}_{i:04d}"
        cache_path = features_dir / f"{video_id}.psfc"
        label_path = labels_dir / f"{video_id}.csv"
        write_cache(feats, cache_path)
        write_labels_csv(labels, label_path)
        entries.append(ManifestEntry(video_id, group, str(cache_path), str(label_path)))
        if i == 0:
            write_vocabulary(labels.vocabulary, vocab_path)
    manifest = DatasetManifest(entries=entries, vocabulary_path=str(vocab_path))
    manifest.save(out / "manifest.json")
    print(f"wrote {len(entries)} videos under {out}")
    return 0


def cmd_split(args) -> int:
    manifest = _resolve_manifest(args)
    spec = stratified_kfold(manifest, args.k, seed=args.seed)
    spec.save(args.out)
    sizes = [len(fold) for fold in spec.folds]
    print(f"wrote {args.k}-fold spec to {args.out} (fold sizes {sizes})")
    return 0


def cmd_train(args) -> int:
    manifest = _resolve_manifest(args)
    vocabulary = _vocabulary(manifest)
    spec = FoldSpec.load(args.folds)
    train_ids, test_ids = fold_iter(spec, args.fold)
    train_videos = [load_video(manifest, vid, vocabulary) for vid in train_ids]

    config = _load_config_file(args.config)
    model_overrides = dict(config.get("model", {}))
    model_overrides.setdefault("num_classes", len(vocabulary))
    model_overrides.setdefault("feat_dim", train_videos[0][0].feat_dim)
    cfg = ModelConfig(**model_overrides)
    train_overrides = dict(config.get("train", {}))
    if args.seed is not None:
        train_overrides["seed"] = args.seed
    if args.epochs is not None:
        train_overrides["epochs"] = args.epochs
    if "milestone_fractions" in train_overrides:
        train_overrides["milestone_fractions"] = tuple(train_overrides["milestone_fractions"])
    if "adam_betas" in train_overrides:
        train_overrides["adam_betas"] = tuple(train_overrides["adam_betas"])
    tcfg = TrainConfig(**train_overrides)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps({"model": asdict(cfg), "train": asdict(tcfg)}, indent=2, sort_keys=True) + "\n"
    )
    params, manifest_run = train_fold(train_videos, cfg, tcfg, dataset_digest=manifest.digest())

    checkpoint = out / f"checkpoint_fold{args.fold}.psck"
    save_checkpoint(params, cfg, checkpoint)
    test_feats = []
    for vid in test_ids:
        feats, _ = load_video(manifest, vid, vocabulary)
        test_feats.append((vid, feats))
    dumps = dump_predictions(params, cfg, test_feats, out / "dumps")
    manifest_run.checkpoint_path = str(checkpoint)
    manifest_run.dump_paths = [str(p) for p in dumps]
    manifest_run.save(out / "run_manifest.json")
    print(
        f"fold {args.fold}: trained {tcfg.epochs} epochs on {len(train_videos)} videos, "
        f"dumped {len(dumps)} held-out predictions to {out / 'dumps'}"
    )
    return 0


def cmd_eval(args) -> int:
    manifest = _resolve_manifest(args)
    vocabulary = _vocabulary(manifest)
    spec = FoldSpec.load(args.folds)
    _, test_ids = fold_iter(spec, args.fold)
    exclude = _parse_exclude(args.metrics_exclude)
    scored = []
    for vid in test_ids:
        entry = manifest.entry(vid)
        gt = read_labels(entry.label_path, vocabulary)
        pred_labels, probabilities = read_predictions(Path(args.dumps) / f"{vid}.pspd")
        if pred_labels.shape[0] != gt.frame_count:
            raise ValueError(
                f"video {vid}: prediction has {pred_labels.shape[0]} frames, "
                f"labels have {gt.frame_count}"
            )
        scored.append((vid, pred_labels, gt.labels, probabilities))
    report = aggregate(scored, num_classes=len(vocabulary), exclude=exclude)
    Path(args.out).write_text(report.to_json() + "\n")
    print(f"fold {args.fold}: {render_fold_row(report)}")
    return 0


def cmd_report(args) -> int:
    folds = [FoldReport.load(path) for path in args.reports]
    study = summarize(folds)
    Path(args.out).write_text(study.to_json() + "\n")
    table = render_study_table(study, row_label=args.row_label)
    if args.table:
        Path(args.table).write_text(table)
    print(table, end="")
    return 0


def cmd_ribbon(args) -> int:
    vocabulary = read_vocabulary(args.vocab)
    rows = [("ground truth", read_labels(args.gt, vocabulary).labels)]
    for dump in args.pred:
        labels, _ = read_predictions(dump)
        rows.append((Path(dump).stem if len(args.pred) > 1 else "prediction", labels))
    write_ribbon(rows, vocabulary, args.out, px_per_frame=args.px_per_frame)
    print(f"wrote ribbon with {len(rows)} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phaseseg", description="Cached-feature phase segmentation pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cached dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--num-videos", type=int, default=10)
    p.add_argument("--frames", default="120:200", help="LO:HI frame-count range")
    p.add_argument("--feat-dim", type=int, default=16)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--groups", default="BL,BN,SD")
    p.add_argument("--min-segment", type=int, default=20)
    p.add_argument("--mean-separation", type=float, default=8.0)
    p.add_argument("--noise", type=float, default=0.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="build a stratified K-fold spec")
    p.add_argument("--manifest")
    p.add_argument("--features-dir")
    p.add_argument("--labels-dir")
    p.add_argument("--vocab")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one fold and dump held-out predictions")
    p.add_argument("--manifest")
    p.add_argument("--features-dir")
    p.add_argument("--labels-dir")
    p.add_argument("--vocab")
    p.add_argument("--folds", required=True)
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with model/train sections")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score one fold's dumps into a FoldReport")
    p.add_argument("--manifest")
    p.add_argument("--features-dir")
    p.add_argument("--labels-dir")
    p.add_argument("--vocab")
    p.add_argument("--folds", required=True)
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--dumps", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics-exclude", help="comma-separated class indices to exclude")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="merge fold reports into a study table")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--table", help="also write the plain-text table here")
    p.add_argument("--row-label", default="model")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("ribbon", help="render ground truth vs predictions as SVG bands")
    p.add_argument("--gt", required=True, help="label CSV/JSON for the ground-truth row")
    p.add_argument("--pred", action="append", default=[], help="PSPD dump (repeatable)")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--px-per-frame", type=float, default=2.0)
    p.set_defaults(func=cmd_ribbon)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
