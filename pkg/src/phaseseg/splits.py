"""Stratified K-fold construction balanced by procedure-type prefix.

Within each prefix group the videos are shuffled with the split seed and
dealt round-robin; the fold pointer continues across groups (visited in
sorted order) so overall fold sizes stay within one of each other. The
resulting FoldSpec is serialized once and reused by every run.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    group: str
    feature_path: str
    label_path: str


@dataclass
class DatasetManifest:
    """Dataset listing: video ids, prefix groups, and file locations."""

    entries: list[ManifestEntry]
    vocabulary_path: str | None = None

    def __post_init__(self) -> None:
        ids = [e.video_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest contains duplicate video ids")

    def groups(self) -> dict[str, list[str]]:
        grouped: dict[str, list[str]] = {}
        for entry in self.entries:
            grouped.setdefault(entry.group, []).append(entry.video_id)
        return grouped

    def entry(self, video_id: str) -> ManifestEntry:
        for candidate in self.entries:
            if candidate.video_id == video_id:
                return candidate
        raise KeyError(f"video id {video_id!r} not in manifest")

    def to_json(self) -> str:
        payload = {
            "vocabulary": self.vocabulary_path,
            "videos": [
                {
                    "id": e.video_id,
                    "group": e.group,
                    "features": e.feature_path,
                    "labels": e.label_path,
                }
                for e in self.entries
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        payload = json.loads(Path(path).read_text())
        entries = [
            ManifestEntry(v["id"], v["group"], v["features"], v["labels"])
            for v in payload["videos"]
        ]
        return cls(entries=entries, vocabulary_path=payload.get("vocabulary"))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class FoldSpec:
    """Disjoint, exhaustive assignment of every video to one held-out fold."""

    seed: int
    num_folds: int
    folds: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        if len(self.folds) != self.num_folds:
            raise ValueError(f"{len(self.folds)} folds listed, expected {self.num_folds}")
        flat = [vid for fold in self.folds for vid in fold]
        if len(set(flat)) != len(flat):
            raise ValueError("a video id appears in more than one fold")

    def save(self, path: str | Path) -> None:
        payload = {"seed": self.seed, "K": self.num_folds, "folds": [list(f) for f in self.folds]}
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FoldSpec":
        payload = json.loads(Path(path).read_text())
        return cls(
            seed=int(payload["seed"]),
            num_folds=int(payload["K"]),
            folds=tuple(tuple(fold) for fold in payload["folds"]),
        )


def stratified_kfold(manifest: DatasetManifest, num_folds: int, seed: int) -> FoldSpec:
    """Deal each prefix group round-robin after a seeded shuffle."""
    if num_folds < 2:
        raise ValueError("need at least 2 folds")
    grouped = manifest.groups()
    if not grouped or any(not ids for ids in grouped.values()):
        raise ValueError("every prefix group must be nonempty")
    rng = np.random.default_rng(seed)
    folds: list[list[str]] = [[] for _ in range(num_folds)]
    pointer = 0
    for group in sorted(grouped):
        ids = sorted(grouped[group])
        if len(ids) < num_folds:
            warnings.warn(
                f"prefix group {group!r} has {len(ids)} videos for {num_folds} folds; "
                "some folds get none",
                stacklevel=2,
            )
        for idx in rng.permutation(len(ids)):
            folds[pointer % num_folds].append(ids[int(idx)])
            pointer += 1
    return FoldSpec(seed=seed, num_folds=num_folds, folds=tuple(tuple(f) for f in folds))


def fold_iter(spec: FoldSpec, fold_index: int) -> tuple[list[str], list[str]]:
    """(train ids, held-out test ids) for one fold."""
    if not 0 <= fold_index < spec.num_folds:
        raise ValueError(f"fold index {fold_index} outside [0, {spec.num_folds})")
    test = list(spec.folds[fold_index])
    train = [vid for k, fold in enumerate(spec.folds) if k != fold_index for vid in fold]
    return train, test
