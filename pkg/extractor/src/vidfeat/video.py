"""Frame decoding and per-encoder preprocessing.

A "video" is either a decodable video file or a directory of image frames
(sorted by filename). When a target frame count is given, decoded frames are
index-resampled to that count so extraction aligns with the annotation rate.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from .registry import NORMALIZATION_PRESETS, EncoderSpec

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


class DecodeError(RuntimeError):
    """The input could not be decoded into frames."""


def _frames_from_dir(path: Path) -> np.ndarray:
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DecodeError(f"{path}: no image frames found")
    frames = []
    for file in files:
        image = cv2.imread(str(file), cv2.IMREAD_COLOR)
        if image is None:
            raise DecodeError(f"{file}: unreadable image")
        frames.append(cv2.cvtColor(image, cv2.COLOR_BGR2RGB))
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise DecodeError(f"{path}: frames disagree on shape: {sorted(shapes)}")
    return np.stack(frames)


def _frames_from_file(path: Path) -> np.ndarray:
    capture = cv2.VideoCapture(str(path))
    if not capture.isOpened():
        raise DecodeError(f"{path}: cv2 cannot open this video")
    frames = []
    while True:
        ok, image = capture.read()
        if not ok:
            break
        frames.append(cv2.cvtColor(image, cv2.COLOR_BGR2RGB))
    capture.release()
    if not frames:
        raise DecodeError(f"{path}: no frames decoded")
    return np.stack(frames)


def load_frames(path: str | Path, frame_count: int | None = None) -> np.ndarray:
    """Decode to [frames, height, width, 3] uint8 RGB, optionally resampled
    to exactly frame_count frames by uniform index selection."""
    path = Path(path)
    if not path.exists():
        raise DecodeError(f"{path}: does not exist")
    frames = _frames_from_dir(path) if path.is_dir() else _frames_from_file(path)
    if frame_count is not None and frame_count != frames.shape[0]:
        if frame_count < 1:
            raise ValueError("frame_count must be >= 1")
        idx = np.round(np.linspace(0, frames.shape[0] - 1, frame_count)).astype(np.int64)
        frames = frames[idx]
    return frames


def preprocess(frames: np.ndarray, spec: EncoderSpec) -> np.ndarray:
    """Short-side resize, center crop, scale to [0, 1], normalize.
    Returns float32 [frames, 3, size, size]."""
    mean, std = NORMALIZATION_PRESETS[spec.normalization]
    size = spec.input_size
    out = np.empty((frames.shape[0], 3, size, size), dtype=np.float32)
    for i, frame in enumerate(frames):
        height, width = frame.shape[:2]
        scale = spec.resize / min(height, width)
        resized = cv2.resize(
            frame,
            (max(size, round(width * scale)), max(size, round(height * scale))),
            interpolation=cv2.INTER_LINEAR,
        )
        new_h, new_w = resized.shape[:2]
        top = (new_h - size) // 2
        left = (new_w - size) // 2
        crop = resized[top : top + size, left : left + size].astype(np.float32) / 255.0
        out[i] = ((crop - mean) / std).transpose(2, 0, 1)
    return out
