"""Per-frame feature cache and label streams.

Defines the on-disk "PSFC" binary cache for per-frame embeddings, the label
CSV/JSON formats, clip-to-frame placement for clip encoders, stride
interpolation back to full annotation rate, feature/label length
reconciliation, and a synthetic dataset generator for desk-scale runs.
"""

from __future__ import annotations

import csv
import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CACHE_MAGIC = b"PSFC"
CACHE_VERSION = 1

_HEADER = struct.Struct("<IIII")  # frame_count, feat_dim, stride, tag byte length


class CacheFormatError(ValueError):
    """A feature cache file violates the PSFC on-disk format."""


class TruncationWarning(UserWarning):
    """Feature and label streams were cut to their shared length."""


@dataclass(eq=False)
class FeatureSequence:
    """T x d matrix of per-frame float32 embeddings plus provenance.

    `stride` is the sampling stride of the raw extraction; a value of s means
    row i holds the features of source frame s*i. After interpolation to full
    rate the stride is 1.
    """

    data: np.ndarray
    source_tag: str = ""
    stride: int = 1

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError(f"feature data must be 2-D (frames x dims), got shape {self.data.shape}")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValueError(f"feature data must be at least 1x1, got shape {self.data.shape}")
        if int(self.stride) < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        self.stride = int(self.stride)

    @property
    def frame_count(self) -> int:
        return self.data.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.data.shape[1]


@dataclass(eq=False)
class LabelSequence:
    """Length-T sequence of phase indices with an ordered phase vocabulary."""

    labels: np.ndarray
    vocabulary: list[str]

    def __post_init__(self) -> None:
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or self.labels.size < 1:
            raise ValueError(f"labels must be a nonempty 1-D sequence, got shape {self.labels.shape}")
        self.vocabulary = list(self.vocabulary)
        if not self.vocabulary:
            raise ValueError("vocabulary must not be empty")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise ValueError("vocabulary contains duplicate names")
        lo, hi = int(self.labels.min()), int(self.labels.max())
        if lo < 0 or hi >= len(self.vocabulary):
            raise ValueError(
                f"label index out of range: saw [{lo}, {hi}] with {len(self.vocabulary)} classes"
            )

    @property
    def frame_count(self) -> int:
        return self.labels.shape[0]

    @property
    def num_classes(self) -> int:
        return len(self.vocabulary)


@dataclass(frozen=True)
class ClipSpec:
    """Sliding-window layout of a clip encoder.

    `extraction_stride` is the temporal sampling stride recorded in the cache;
    `clip_stride` is the advance between clip starts and defaults to the same
    value. `center_offset` defaults to floor(clip_len / 2).
    """

    clip_len: int
    extraction_stride: int
    clip_stride: int | None = None
    center_offset: int | None = None

    def __post_init__(self) -> None:
        if self.clip_len < 1 or self.extraction_stride < 1:
            raise ValueError("clip_len and extraction_stride must be >= 1")
        if self.clip_stride is None:
            object.__setattr__(self, "clip_stride", self.extraction_stride)
        if self.clip_stride < 1:
            raise ValueError("clip_stride must be >= 1")
        if self.center_offset is None:
            object.__setattr__(self, "center_offset", self.clip_len // 2)
        if not 0 <= self.center_offset < self.clip_len:
            raise ValueError(f"center_offset {self.center_offset} outside [0, {self.clip_len})")


@dataclass(frozen=True)
class ClipPlacement:
    """One planned clip: its start frame, the frame its embedding is assigned to,
    and whether edge-replication padding was required."""

    start: int
    assigned_frame: int
    padded: bool = False


def write_cache(seq: FeatureSequence, path: str | Path) -> None:
    """Write `seq` to `path` in the PSFC binary layout (bit-exact round trip)."""
    bad = np.argwhere(~np.isfinite(seq.data))
    if bad.size:
        frame, dim = (int(v) for v in bad[0])
        raise ValueError(f"non-finite feature value at frame {frame}, dim {dim}; refusing to write")
    tag = seq.source_tag.encode("utf-8")
    payload = np.ascontiguousarray(seq.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(bytes([CACHE_VERSION]))
        fh.write(_HEADER.pack(seq.frame_count, seq.feat_dim, seq.stride, len(tag)))
        fh.write(tag)
        fh.write(payload)


def read_cache(path: str | Path) -> FeatureSequence:
    """Read a PSFC cache, validating format, finiteness, and payload size."""
    raw = Path(path).read_bytes()
    if len(raw) < len(CACHE_MAGIC) + 1 + _HEADER.size:
        raise CacheFormatError(f"{path}: file too short to hold a PSFC header ({len(raw)} bytes)")
    if raw[:4] != CACHE_MAGIC:
        raise CacheFormatError(f"{path}: bad magic {raw[:4]!r}, expected {CACHE_MAGIC!r}")
    version = raw[4]
    if version != CACHE_VERSION:
        raise CacheFormatError(f"{path}: unsupported format version {version}")
    frame_count, feat_dim, stride, tag_len = _HEADER.unpack_from(raw, 5)
    if frame_count < 1 or feat_dim < 1 or stride < 1:
        raise CacheFormatError(
            f"{path}: invalid header (T={frame_count}, d={feat_dim}, stride={stride})"
        )
    off = 5 + _HEADER.size
    tag = raw[off : off + tag_len].decode("utf-8")
    off += tag_len
    expected = frame_count * feat_dim * 4
    actual = len(raw) - off
    if actual != expected:
        raise CacheFormatError(f"{path}: payload holds {actual} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", count=frame_count * feat_dim, offset=off)
    data = data.reshape(frame_count, feat_dim).copy()
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        frame, dim = (int(v) for v in bad[0])
        raise CacheFormatError(f"{path}: non-finite payload value at frame {frame}, dim {dim}")
    return FeatureSequence(data, source_tag=tag, stride=stride)


def interpolate_to_full_rate(seq: FeatureSequence, target_frames: int) -> FeatureSequence:
    """Linearly interpolate strided samples to one feature per frame.

    Sample i of `seq` sits at frame stride*i; frames between samples are
    linearly interpolated per dimension and frames past the last sample hold
    the last sample's value. The result has stride 1.
    """
    num_samples = seq.frame_count
    if target_frames < num_samples:
        raise ValueError(
            f"target frame count {target_frames} is below the {num_samples} raw samples"
        )
    if seq.stride == 1 and target_frames == num_samples:
        return seq
    t = np.arange(target_frames, dtype=np.float64)
    if num_samples == 1:
        out = np.repeat(seq.data, target_frames, axis=0)
        return FeatureSequence(out, source_tag=seq.source_tag, stride=1)
    stride = float(seq.stride)
    idx = np.minimum((t // stride).astype(np.int64), num_samples - 2)
    frac = np.clip((t - idx * stride) / stride, 0.0, 1.0)[:, None]
    data = seq.data.astype(np.float64)
    out = (1.0 - frac) * data[idx] + frac * data[idx + 1]
    return FeatureSequence(out.astype(np.float32), source_tag=seq.source_tag, stride=1)


def clip_centers(video_frames: int, spec: ClipSpec) -> list[ClipPlacement]:
    """Plan sliding-window clips and the frame each clip embedding is assigned to.

    Starts advance by `spec.clip_stride` while the clip fits; videos shorter
    than one clip get a single edge-padded clip clamped to start 0.
    """
    if video_frames < 1:
        raise ValueError("video_frames must be >= 1")
    last = video_frames - 1
    if video_frames < spec.clip_len:
        assigned = min(max(spec.center_offset, 0), last)
        return [ClipPlacement(start=0, assigned_frame=assigned, padded=True)]
    plan = []
    for start in range(0, video_frames - spec.clip_len + 1, spec.clip_stride):
        assigned = min(max(start + spec.center_offset, 0), last)
        plan.append(ClipPlacement(start=start, assigned_frame=assigned))
    return plan


def reconcile_lengths(
    feat: FeatureSequence, labels: LabelSequence
) -> tuple[FeatureSequence, LabelSequence]:
    """Truncate both streams to their minimum shared length, warning on drops."""
    shared = min(feat.frame_count, labels.frame_count)
    if shared == 0:
        raise ValueError("cannot reconcile empty streams")
    if feat.frame_count == labels.frame_count:
        return feat, labels
    warnings.warn(
        f"length mismatch: dropping {feat.frame_count - shared} feature frame(s) and "
        f"{labels.frame_count - shared} label frame(s); keeping {shared}",
        TruncationWarning,
        stacklevel=2,
    )
    return (
        FeatureSequence(feat.data[:shared].copy(), source_tag=feat.source_tag, stride=feat.stride),
        LabelSequence(labels.labels[:shared].copy(), labels.vocabulary),
    )


def default_vocabulary(num_classes: int) -> list[str]:
    return [f"phase_{i:02d}" for i in range(num_classes)]


def generate_synthetic(
    num_videos: int,
    frame_range: tuple[int, int],
    feat_dim: int,
    num_classes: int,
    seed: int,
    min_segment: int = 20,
    mean_separation: float = 6.0,
    noise: float = 1.0,
) -> list[tuple[FeatureSequence, LabelSequence]]:
    """Generate Markov-chain phase sequences with class-conditional Gaussian features.

    Segment durations are min_segment plus a uniform extra (the final run may be
    truncated by the video end); transitions are uniform over the other classes.
    Deterministic for a fixed seed.
    """
    if num_classes < 2 or feat_dim < 1 or num_videos < 1:
        raise ValueError("need num_videos >= 1, num_classes >= 2, feat_dim >= 1")
    lo, hi = frame_range
    if not 1 <= lo <= hi:
        raise ValueError(f"degenerate frame range {frame_range}")
    if min_segment < 1:
        raise ValueError("min_segment must be >= 1")
    rng = np.random.default_rng(seed)
    if feat_dim >= num_classes:
        means = np.zeros((num_classes, feat_dim))
        means[np.arange(num_classes), np.arange(num_classes)] = mean_separation
    else:
        means = rng.normal(0.0, mean_separation, size=(num_classes, feat_dim))
    vocab = default_vocabulary(num_classes)
    out = []
    for _ in range(num_videos):
        frames = int(rng.integers(lo, hi + 1))
        labels = np.empty(frames, dtype=np.int64)
        t = 0
        state = int(rng.integers(num_classes))
        while t < frames:
            dwell = min_segment + int(rng.integers(0, min_segment + 1))
            labels[t : t + dwell] = state
            t += dwell
            hop = int(rng.integers(num_classes - 1))
            state = hop if hop < state else hop + 1
        feats = means[labels] + noise * rng.standard_normal((frames, feat_dim))
        out.append(
            (
                FeatureSequence(feats.astype(np.float32), source_tag=f"synthetic-seed{seed}"),
                LabelSequence(labels, vocab),
            )
        )
    return out


def write_vocabulary(vocabulary: list[str], path: str | Path) -> None:
    Path(path).write_text(json.dumps(list(vocabulary), indent=2) + "\n")


def read_vocabulary(path: str | Path) -> list[str]:
    vocab = json.loads(Path(path).read_text())
    if not isinstance(vocab, list) or not all(isinstance(v, str) for v in vocab):
        raise ValueError(f"{path}: vocabulary must be a JSON array of strings")
    return vocab


def write_labels_csv(labels: LabelSequence, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "label"])
        for i, lab in enumerate(labels.labels):
            writer.writerow([i, int(lab)])


def read_labels_csv(path: str | Path, vocabulary: list[str]) -> LabelSequence:
    """Read a `frame,label` CSV; frames must be 0..T-1 in order."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["frame", "label"]:
        raise ValueError(f"{path}: expected header 'frame,label'")
    labels = np.empty(len(rows) - 1, dtype=np.int64)
    for i, row in enumerate(rows[1:]):
        frame, lab = int(row[0]), int(row[1])
        if frame != i:
            raise ValueError(f"{path}: row {i + 1} has frame index {frame}, expected {i}")
        labels[i] = lab
    return LabelSequence(labels, vocabulary)


def read_labels_json(path: str | Path, vocabulary: list[str]) -> LabelSequence:
    """Read segments JSON ([{label, start, end}] with inclusive ends) and expand."""
    segments = json.loads(Path(path).read_text())
    if not isinstance(segments, list) or not segments:
        raise ValueError(f"{path}: expected a nonempty JSON array of segments")
    expected_start = 0
    chunks = []
    for seg in segments:
        label, start, end = int(seg["label"]), int(seg["start"]), int(seg["end"])
        if start != expected_start or end < start:
            raise ValueError(
                f"{path}: segments must tile frames contiguously; "
                f"got start={start}, end={end}, expected start={expected_start}"
            )
        chunks.append(np.full(end - start + 1, label, dtype=np.int64))
        expected_start = end + 1
    return LabelSequence(np.concatenate(chunks), vocabulary)


def read_labels(path: str | Path, vocabulary: list[str]) -> LabelSequence:
    path = Path(path)
    if path.suffix == ".json":
        return read_labels_json(path, vocabulary)
    return read_labels_csv(path, vocabulary)
