"""Multi-stage temporal convolutional head (MS-TCN++ layout).

Stage 1 (prediction generation) projects features to the hidden width and
stacks dual-dilated residual layers: layer i runs two parallel width-3
convolutions at dilations 2^i and 2^(L-1-i), fuses the concatenation with a
1x1 convolution, applies relu, and adds the residual. Each refinement stage
consumes the softmax of the previous stage's logits through a 1x1 projection
and single-dilation residual layers (dilation 2^i at layer i). Convolutions
are acausal with symmetric zero padding; stages do not share weights.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .feature_store import FeatureSequence, LabelSequence, default_vocabulary

KERNEL_WIDTH = 3


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and loss hyperparameters; tensor shapes are a pure
    function of this record."""

    num_classes: int
    feat_dim: int
    hidden_maps: int = 64
    pg_layers: int = 13
    refine_stages: int = 4
    refine_layers: int = 13
    smoothing_weight: float = 0.35
    clamp_tau: float = 4.0
    smoothing_window: int = 30  # stored for provenance; the loss is the plain truncated MSE
    dropout: float = 0.0
    share_refine_weights: bool = False

    def __post_init__(self) -> None:
        for name in ("num_classes", "feat_dim", "hidden_maps", "pg_layers", "refine_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.refine_stages < 0:
            raise ValueError("refine_stages must be >= 0")
        if self.smoothing_weight < 0:
            raise ValueError("smoothing_weight must be >= 0")
        if self.dropout != 0.0:
            raise ValueError("dropout is recorded for ablation but not implemented; must be 0.0")
        if self.share_refine_weights:
            raise ValueError("refinement stages use independent weights; sharing not implemented")

    @property
    def num_stages(self) -> int:
        return 1 + self.refine_stages

    def pg_dilation_pairs(self) -> list[tuple[int, int]]:
        top = self.pg_layers - 1
        return [(2**i, 2 ** (top - i)) for i in range(self.pg_layers)]

    def refine_dilations(self) -> list[int]:
        return [2**i for i in range(self.refine_layers)]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


class ModelParams:
    """Named weight tensors in canonical order."""

    def __init__(self, tensors: dict[str, ad.Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> ad.Tensor:
        return self.tensors[name]

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.values for name, t in self.tensors.items()}

    def grads(self) -> dict[str, np.ndarray]:
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.values))
            for name, t in self.tensors.items()
        }


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical tensor name -> shape map for one model instance."""
    hidden, classes, feat = cfg.hidden_maps, cfg.num_classes, cfg.feat_dim
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name: str, out_ch: int, in_ch: int, width: int) -> None:
        shapes[f"{name}.w"] = (out_ch, in_ch, width)
        shapes[f"{name}.b"] = (out_ch,)

    conv("pg.in", hidden, feat, 1)
    for i in range(cfg.pg_layers):
        conv(f"pg.{i}.dil_a", hidden, hidden, KERNEL_WIDTH)
        conv(f"pg.{i}.dil_b", hidden, hidden, KERNEL_WIDTH)
        conv(f"pg.{i}.fuse", hidden, 2 * hidden, 1)
    conv("pg.out", classes, hidden, 1)
    for s in range(cfg.refine_stages):
        conv(f"refine.{s}.in", hidden, classes, 1)
        for i in range(cfg.refine_layers):
            conv(f"refine.{s}.{i}.dil", hidden, hidden, KERNEL_WIDTH)
            conv(f"refine.{s}.{i}.pw", hidden, hidden, 1)
        conv(f"refine.{s}.out", classes, hidden, 1)
    return shapes


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> ModelParams:
    """Seeded centered-uniform init scaled by 1/sqrt(fan_in) of each layer."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(cfg)
    tensors: dict[str, ad.Tensor] = {}
    for name, shape in shapes.items():
        if name.endswith(".w"):
            fan_in = shape[1] * shape[2]
        else:
            w_shape = shapes[name[:-2] + ".w"]
            fan_in = w_shape[1] * w_shape[2]
        bound = 1.0 / np.sqrt(fan_in)
        values = rng.uniform(-bound, bound, size=shape).astype(dtype)
        tensors[name] = ad.Tensor(values, requires_grad=True)
    return ModelParams(tensors)


def parameter_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for shape in param_shapes(cfg).values())


def _features_tensor(params: ModelParams, cfg: ModelConfig, feats: FeatureSequence) -> ad.Tensor:
    if feats.feat_dim != cfg.feat_dim:
        raise ValueError(f"feature dim {feats.feat_dim} != configured {cfg.feat_dim}")
    if feats.stride != 1:
        raise ValueError(f"features must be at full rate (stride 1), got stride {feats.stride}")
    dtype = next(iter(params.tensors.values())).values.dtype
    return ad.Tensor(np.ascontiguousarray(feats.data.T, dtype=dtype))


def forward(params: ModelParams, cfg: ModelConfig, feats: FeatureSequence) -> list[ad.Tensor]:
    """Run all stages; returns num_stages logit tensors of shape [classes, frames]."""
    x = _features_tensor(params, cfg, feats)
    p = params

    hidden = ad.conv1d_dilated(x, p["pg.in.w"], p["pg.in.b"], 1)
    for i, (dil_a, dil_b) in enumerate(cfg.pg_dilation_pairs()):
        branch_a = ad.conv1d_dilated(hidden, p[f"pg.{i}.dil_a.w"], p[f"pg.{i}.dil_a.b"], dil_a)
        branch_b = ad.conv1d_dilated(hidden, p[f"pg.{i}.dil_b.w"], p[f"pg.{i}.dil_b.b"], dil_b)
        fused = ad.conv1d_dilated(
            ad.concat_channels(branch_a, branch_b), p[f"pg.{i}.fuse.w"], p[f"pg.{i}.fuse.b"], 1
        )
        hidden = ad.add(ad.relu(fused), hidden)
    stages = [ad.conv1d_dilated(hidden, p["pg.out.w"], p["pg.out.b"], 1)]

    for s in range(cfg.refine_stages):
        soft = ad.softmax_channels(stages[-1])
        hidden = ad.conv1d_dilated(soft, p[f"refine.{s}.in.w"], p[f"refine.{s}.in.b"], 1)
        for i, dilation in enumerate(cfg.refine_dilations()):
            out = ad.relu(
                ad.conv1d_dilated(hidden, p[f"refine.{s}.{i}.dil.w"], p[f"refine.{s}.{i}.dil.b"], dilation)
            )
            out = ad.conv1d_dilated(out, p[f"refine.{s}.{i}.pw.w"], p[f"refine.{s}.{i}.pw.b"], 1)
            hidden = ad.add(hidden, out)
        stages.append(ad.conv1d_dilated(hidden, p[f"refine.{s}.out.w"], p[f"refine.{s}.out.b"], 1))
    return stages


def predict(
    params: ModelParams,
    cfg: ModelConfig,
    feats: FeatureSequence,
    vocabulary: list[str] | None = None,
) -> tuple[LabelSequence, np.ndarray]:
    """Final-stage argmax labels (ties toward the smaller class index) and the
    final-stage softmax probabilities as a [classes, frames] array."""
    final = forward(params, cfg, feats)[-1].values
    shifted = final - final.max(axis=0, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=0, keepdims=True)
    labels = probs.argmax(axis=0)
    vocab = vocabulary if vocabulary is not None else default_vocabulary(cfg.num_classes)
    return LabelSequence(labels, vocab), probs


def save_checkpoint(params: ModelParams, cfg: ModelConfig, path: str | Path) -> None:
    """Write the named-tensor binary plus a JSON config sidecar (path + '.json')."""
    ad.save_named_tensors(params.arrays(), path)
    Path(str(path) + ".json").write_text(cfg.to_json() + "\n")


def load_checkpoint(path: str | Path) -> tuple[ModelParams, ModelConfig]:
    cfg = ModelConfig.from_json(Path(str(path) + ".json").read_text())
    named = ad.load_named_tensors(path)
    expected = param_shapes(cfg)
    if set(named) != set(expected):
        raise ValueError(f"{path}: checkpoint tensors do not match the config's layout")
    for name, shape in expected.items():
        if named[name].shape != shape:
            raise ValueError(f"{path}: {name} has shape {named[name].shape}, expected {shape}")
    tensors = {name: ad.Tensor(named[name], requires_grad=True) for name in expected}
    return ModelParams(tensors), cfg
