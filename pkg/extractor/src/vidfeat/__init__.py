"""Encoder bridge: decode videos, run an embedding backend, write PSFC caches."""

from .extract import ExtractorConfig, extract_video
from .registry import ENCODERS, EncoderSpec, encoder_spec
from .video import DecodeError, load_frames

__all__ = [
    "ENCODERS",
    "DecodeError",
    "EncoderSpec",
    "ExtractorConfig",
    "encoder_spec",
    "extract_video",
    "load_frames",
]
