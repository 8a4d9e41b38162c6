"""Command-line extraction: one PSFC cache per input video."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .extract import ExtractorConfig, extract_video
from .registry import ENCODERS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidfeat", description="Encoder-to-cache bridge")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encoders", help="list registry rows")
    p.set_defaults(func=cmd_encoders)

    p = sub.add_parser("extract", help="extract one video into a PSFC cache")
    p.add_argument("--video", required=True, help="video file or directory of frames")
    p.add_argument("--out", required=True)
    p.add_argument("--encoder", help="registry name (or use --config)")
    p.add_argument("--config", help="ExtractorConfig JSON file")
    p.add_argument("--stride", type=int)
    p.add_argument("--backend")
    p.add_argument("--adapter-checkpoint")
    p.add_argument("--frame-count", type=int, help="align to this many frames")
    p.set_defaults(func=cmd_extract)
    return parser


def cmd_encoders(_args) -> int:
    for name, spec in sorted(ENCODERS.items()):
        clip = spec.clip_len if spec.clip_len else "-"
        print(f"{name:18s} {spec.modality:5s} input={spec.input_size} clip={clip} d={spec.feat_dim}")
    return 0


def cmd_extract(args) -> int:
    if not args.config and not args.encoder:
        raise ValueError("provide --encoder or --config")
    fields = {}
    if args.config:
        base = ExtractorConfig.load(args.config)
        fields = {
            key: getattr(base, key)
            for key in ("encoder", "extraction_stride", "backend", "adapter_checkpoint")
        }
    if args.encoder:
        fields["encoder"] = args.encoder
    if args.stride is not None:
        fields["extraction_stride"] = args.stride
    if args.backend:
        fields["backend"] = args.backend
    if args.adapter_checkpoint:
        fields["adapter_checkpoint"] = args.adapter_checkpoint
    cfg = ExtractorConfig(**fields)
    out = extract_video(args.video, cfg, args.out, frame_count=args.frame_count)
    print(f"wrote {out} ({cfg.encoder}, stride {cfg.stride})")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
