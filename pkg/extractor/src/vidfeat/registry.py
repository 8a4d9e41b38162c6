"""Encoder registry: input geometry, clip layout, and per-frame feature
dimensionality for every supported backbone."""

from __future__ import annotations

from dataclasses import dataclass

NORMALIZATION_PRESETS = {
    "imagenet": ((0.485, 0.456, 0.406), (0.229, 0.224, 0.225)),
    "kinetics": ((0.45, 0.45, 0.45), (0.225, 0.225, 0.225)),
}


@dataclass(frozen=True)
class EncoderSpec:
    name: str
    modality: str  # "image" or "clip"
    input_size: int
    resize: int  # short-side resize before the center crop
    clip_len: int | None
    feat_dim: int
    normalization: str
    default_stride: int = 1

    def __post_init__(self) -> None:
        if self.modality not in ("image", "clip"):
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.modality == "clip" and not self.clip_len:
            raise ValueError(f"{self.name}: clip encoders need a clip length")
        if self.normalization not in NORMALIZATION_PRESETS:
            raise ValueError(f"{self.name}: unknown normalization preset {self.normalization!r}")


ENCODERS: dict[str, EncoderSpec] = {
    spec.name: spec
    for spec in (
        EncoderSpec("resnet50-imagenet", "image", 224, 256, None, 2048, "imagenet"),
        EncoderSpec("i3d-r50-kinetics", "clip", 224, 224, 16, 2048, "kinetics"),
        EncoderSpec("dinov3-vitb16", "image", 224, 224, None, 768, "imagenet"),
        EncoderSpec("dinov3-vitl16", "image", 224, 224, None, 1024, "imagenet"),
        EncoderSpec("dinov3-vit7b16", "image", 224, 224, None, 4096, "imagenet"),
        EncoderSpec("vjepa2-vitl", "clip", 256, 256, 64, 1024, "imagenet", default_stride=4),
        EncoderSpec("vjepa2-vitg16", "clip", 384, 384, 64, 1408, "imagenet", default_stride=4),
    )
}


def encoder_spec(name: str) -> EncoderSpec:
    try:
        return ENCODERS[name]
    except KeyError:
        raise KeyError(f"unknown encoder {name!r}; known: {sorted(ENCODERS)}") from None
