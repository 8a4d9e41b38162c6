"""Video-to-cache extraction.

Image encoders embed every stride-th frame. Clip encoders follow the
sliding-window plan from the temporal package (clip embeddings assigned to
center frames, edge replication for short videos); the center-frame
embeddings are then placed onto the regular sample grid {0, stride, ...} by
linear interpolation with edge hold, and the cache is written with the raw
stride so the consumer performs full-rate interpolation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from phaseseg.feature_store import ClipSpec, FeatureSequence, clip_centers, write_cache

from .backends import make_backend, stable_seed
from .registry import EncoderSpec, encoder_spec
from .video import load_frames, preprocess


@dataclass(frozen=True)
class ExtractorConfig:
    """One extraction run: encoder row plus overrides that must stay
    consistent with the registry."""

    encoder: str
    extraction_stride: int | None = None
    backend: str = "stub"
    adapter_checkpoint: str | None = None
    input_size: int | None = None
    clip_len: int | None = None

    def __post_init__(self) -> None:
        spec = encoder_spec(self.encoder)
        if self.input_size is not None and self.input_size != spec.input_size:
            raise ValueError(
                f"{self.encoder}: input size {self.input_size} conflicts with "
                f"the registry value {spec.input_size}"
            )
        if self.clip_len is not None and self.clip_len != spec.clip_len:
            raise ValueError(
                f"{self.encoder}: clip length {self.clip_len} conflicts with "
                f"the registry value {spec.clip_len}"
            )
        if self.extraction_stride is not None and self.extraction_stride < 1:
            raise ValueError("extraction_stride must be >= 1")

    @property
    def spec(self) -> EncoderSpec:
        return encoder_spec(self.encoder)

    @property
    def stride(self) -> int:
        return self.extraction_stride or self.spec.default_stride

    def source_tag(self) -> str:
        tag = f"{self.encoder}|backend={self.backend}"
        if self.adapter_checkpoint:
            tag += f"|adapter={Path(self.adapter_checkpoint).name}"
        return tag

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExtractorConfig":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "ExtractorConfig":
        return cls.from_json(Path(path).read_text())


def _gather_clip(frames: np.ndarray, start: int, clip_len: int) -> np.ndarray:
    """[3, clip_len, H, W] window with edge replication past the video end."""
    total = frames.shape[0]
    idx = np.clip(np.arange(start, start + clip_len), 0, total - 1)
    return frames[idx].transpose(1, 0, 2, 3)


def _clip_features(
    processed: np.ndarray, cfg: ExtractorConfig, backend
) -> np.ndarray:
    frames = processed.shape[0]
    spec = cfg.spec
    plan = clip_centers(frames, ClipSpec(clip_len=spec.clip_len, extraction_stride=cfg.stride))
    clips = np.stack([_gather_clip(processed, p.start, spec.clip_len) for p in plan])
    clip_embeddings = backend.embed_clips(clips)
    centers = np.array([p.assigned_frame for p in plan], dtype=np.float64)
    grid = np.arange(0, frames, cfg.stride, dtype=np.float64)
    # place center-frame embeddings onto the regular sample grid (edge hold)
    samples = np.empty((grid.size, clip_embeddings.shape[1]), dtype=np.float32)
    for dim in range(clip_embeddings.shape[1]):
        samples[:, dim] = np.interp(grid, centers, clip_embeddings[:, dim])
    return samples


def extract_video(
    video_path: str | Path,
    cfg: ExtractorConfig,
    out_path: str | Path,
    frame_count: int | None = None,
) -> Path:
    """Run the configured encoder over one video and write a PSFC cache."""
    spec = cfg.spec
    frames = load_frames(video_path, frame_count=frame_count)
    processed = preprocess(frames, spec)
    seed = stable_seed(cfg.encoder, cfg.adapter_checkpoint or "")
    backend = make_backend(cfg.backend, spec.feat_dim, seed, cfg.adapter_checkpoint)
    if spec.modality == "image":
        sampled = processed[:: cfg.stride]
        features = backend.embed_images(sampled).astype(np.float32)
    else:
        features = _clip_features(processed, cfg, backend)
    sequence = FeatureSequence(features, source_tag=cfg.source_tag(), stride=cfg.stride)
    write_cache(sequence, out_path)
    return Path(out_path)
