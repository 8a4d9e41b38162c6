"""Optimization recipe for the temporal head.

One optimization step consumes one full video; videos are visited in a
seeded shuffled order each epoch. Adam runs at the configured base rate with
a MultiStep schedule applied at the start of the milestone epochs. Training
always returns the final-epoch parameters; there is no early stopping or
validation-based selection. Prediction dumps ("PSPD") hold the predicted
frame labels and the per-frame class probabilities of the final stage.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .feature_store import FeatureSequence, LabelSequence
from .mstcnpp import ModelConfig, ModelParams, forward, init_params, predict

DUMP_MAGIC = b"PSPD"
DUMP_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings; one step is one full video."""

    epochs: int = 100
    batch_size: int = 1
    base_lr: float = 5e-4
    gamma: float = 0.3
    milestone_fractions: tuple[float, ...] = (0.6, 0.9)
    seed: int = 0
    deterministic: bool = True
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    gradient_clipping: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size != 1:
            raise ValueError("one full video per step: batch_size must be 1")
        if any(not 0.0 < f <= 1.0 for f in self.milestone_fractions):
            raise ValueError("milestone fractions must lie in (0, 1]")
        if self.gradient_clipping:
            raise ValueError("gradient clipping is recorded as disabled and not implemented")

    def milestones(self) -> tuple[int, ...]:
        return tuple(sorted(round(f * self.epochs) for f in self.milestone_fractions))


@dataclass
class RunManifest:
    """Everything needed to reproduce and audit one fold's run."""

    model_config: dict
    train_config: dict
    seed: int
    dataset_digest: str
    epoch_mean_loss: list[float] = field(default_factory=list)
    epoch_lr: list[float] = field(default_factory=list)
    checkpoint_path: str | None = None
    dump_paths: list[str] = field(default_factory=list)
    init_scheme: str = "uniform(-1,1)/sqrt(fan_in)"
    ordering: str = "seeded_shuffle_per_epoch"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        payload = json.loads(Path(path).read_text())
        payload["train_config"]["milestone_fractions"] = tuple(
            payload["train_config"]["milestone_fractions"]
        )
        payload["train_config"]["adam_betas"] = tuple(payload["train_config"]["adam_betas"])
        return cls(**payload)


def total_loss(
    stage_logits: list[ad.Tensor],
    labels,
    smoothing_weight: float,
    clamp_tau: float,
) -> ad.Tensor:
    """Sum over stages of cross-entropy plus the weighted smoothing term."""
    if not stage_logits:
        raise ValueError("no stage logits")
    shape = stage_logits[0].values.shape
    if any(stage.values.shape != shape for stage in stage_logits):
        raise ValueError("all stages must share one [classes, frames] shape")
    loss: ad.Tensor | None = None
    for stage in stage_logits:
        term = ad.cross_entropy_per_frame(stage, labels)
        if smoothing_weight > 0.0:
            smooth = ad.truncated_smoothing_mse(ad.log_softmax_channels(stage), clamp_tau)
            term = ad.add(term, ad.scale(smooth, smoothing_weight))
        loss = term if loss is None else ad.add(loss, term)
    return loss


def _videos_digest(videos: list[tuple[FeatureSequence, LabelSequence]]) -> str:
    digest = hashlib.sha256()
    for feats, labels in videos:
        digest.update(feats.data.tobytes())
        digest.update(labels.labels.tobytes())
    return digest.hexdigest()


def train_fold(
    train_videos: list[tuple[FeatureSequence, LabelSequence]],
    cfg: ModelConfig,
    tcfg: TrainConfig,
    dataset_digest: str | None = None,
) -> tuple[ModelParams, RunManifest]:
    """Train on reconciled (features, labels) pairs; returns the final-epoch
    parameters and the run manifest."""
    if not train_videos:
        raise ValueError("empty training set")
    dims = {feats.feat_dim for feats, _ in train_videos}
    if dims != {cfg.feat_dim}:
        raise ValueError(f"mixed or mismatched feature dims {sorted(dims)} vs config {cfg.feat_dim}")
    for feats, labels in train_videos:
        if feats.frame_count != labels.frame_count:
            raise ValueError(
                f"unreconciled video: {feats.frame_count} feature frames vs "
                f"{labels.frame_count} labels"
            )

    params = init_params(cfg, seed=tcfg.seed)
    state = ad.AdamState.for_params(params.arrays())
    order_rng = np.random.default_rng(tcfg.seed + 1)
    milestones = tcfg.milestones()
    manifest = RunManifest(
        model_config=asdict(cfg),
        train_config=asdict(tcfg),
        seed=tcfg.seed,
        dataset_digest=dataset_digest or _videos_digest(train_videos),
    )
    for epoch in range(tcfg.epochs):
        lr = ad.multistep_lr(tcfg.base_lr, epoch, milestones, tcfg.gamma)
        losses = []
        for index in order_rng.permutation(len(train_videos)):
            feats, labels = train_videos[int(index)]
            params.zero_grad()
            stages = forward(params, cfg, feats)
            loss = total_loss(stages, labels, cfg.smoothing_weight, cfg.clamp_tau)
            loss.backward()
            ad.adam_step(params.arrays(), params.grads(), state, lr, tcfg.adam_betas, tcfg.adam_eps)
            losses.append(float(loss.values))
        manifest.epoch_lr.append(lr)
        manifest.epoch_mean_loss.append(float(np.mean(losses)))
    return params, manifest


def write_predictions(path: str | Path, labels: np.ndarray, probabilities: np.ndarray) -> None:
    """PSPD dump: predicted labels then the [classes, frames] probabilities,
    little-endian 32-bit like the feature cache."""
    labels = np.ascontiguousarray(labels, dtype="<i4")
    probabilities = np.ascontiguousarray(probabilities, dtype="<f4")
    classes, frames = probabilities.shape
    if labels.shape != (frames,):
        raise ValueError(f"labels shape {labels.shape} != ({frames},)")
    with open(path, "wb") as fh:
        fh.write(DUMP_MAGIC)
        fh.write(bytes([DUMP_VERSION]))
        fh.write(struct.pack("<II", frames, classes))
        fh.write(labels.tobytes())
        fh.write(probabilities.tobytes())


def read_predictions(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != DUMP_MAGIC:
        raise ValueError(f"{path}: bad dump magic {raw[:4]!r}")
    if raw[4] != DUMP_VERSION:
        raise ValueError(f"{path}: unsupported dump version {raw[4]}")
    frames, classes = struct.unpack_from("<II", raw, 5)
    off = 13
    expected = frames * 4 + classes * frames * 4
    if len(raw) - off != expected:
        raise ValueError(f"{path}: payload holds {len(raw) - off} bytes, expected {expected}")
    labels = np.frombuffer(raw, dtype="<i4", count=frames, offset=off).astype(np.int64)
    off += frames * 4
    probabilities = (
        np.frombuffer(raw, dtype="<f4", count=classes * frames, offset=off)
        .reshape(classes, frames)
        .copy()
    )
    return labels, probabilities


def dump_predictions(
    params: ModelParams,
    cfg: ModelConfig,
    videos: list[tuple[str, FeatureSequence]],
    out_dir: str | Path,
) -> list[Path]:
    """Write one PSPD file per (video_id, features) pair into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for video_id, feats in videos:
        labels, probabilities = predict(params, cfg, feats)
        path = out_dir / f"{video_id}.pspd"
        write_predictions(path, labels.labels, probabilities)
        paths.append(path)
    return paths
