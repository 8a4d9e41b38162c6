"""Reverse-mode differentiation over dense numpy tensors.

The graph is implicit: every tensor produced by an operation records its
parent tensors and a closure that routes the incoming gradient to them.
`Tensor.backward` materializes the reverse topological order and visits each
node exactly once; parent gradients are accumulated (added into), never
overwritten, so a tensor feeding several consumers collects every
contribution. Training runs the graph in float32; gradient checks run the
same graph in float64.

Also home to the optimizer step, the MultiStep learning-rate rule, the
named-tensor checkpoint format, and the central finite-difference checker
used to verify every operation.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

CHECKPOINT_MAGIC = b"PSCK"
CHECKPOINT_VERSION = 1


class Tensor:
    """A node holding values, an optional gradient accumulator, and its
    backward links into the graph that produced it."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward")

    def __init__(
        self,
        values: np.ndarray,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.values = np.asarray(values)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.values.size != 1:
            raise ValueError(f"backward requires a scalar root, got shape {self.shape}")
        order = _topological_order(self)
        _accumulate(self, np.ones_like(self.values))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def tensor(values, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(values, dtype=dtype), requires_grad=requires_grad)


def _topological_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS; each node appears exactly once."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not (t.requires_grad or t._parents):
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += grad


def _needs_graph(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


def conv1d_dilated(x: Tensor, weight: Tensor, bias: Tensor, dilation: int) -> Tensor:
    """Length-preserving dilated 1-D convolution over [channels, frames].

    Kernel width must be odd; the input is zero padded by dilation*(K-1)/2 on
    both sides so the output has the same frame count. Implemented as an
    im2col matmul; the backward pass scatters the column gradient back
    through the padding.
    """
    in_ch, frames = x.values.shape
    out_ch, w_in_ch, width = weight.values.shape
    if w_in_ch != in_ch:
        raise ValueError(f"weight expects {w_in_ch} input channels, input has {in_ch}")
    if bias.values.shape != (out_ch,):
        raise ValueError(f"bias shape {bias.values.shape} != ({out_ch},)")
    if width % 2 != 1:
        raise ValueError(f"kernel width must be odd, got {width}")
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")

    pad = dilation * (width - 1) // 2
    padded = np.pad(x.values, ((0, 0), (pad, pad))) if pad else x.values
    cols = np.empty((in_ch, width, frames), dtype=x.values.dtype)
    for k in range(width):
        cols[:, k, :] = padded[:, k * dilation : k * dilation + frames]
    flat = cols.reshape(in_ch * width, frames)
    w2d = weight.values.reshape(out_ch, in_ch * width)
    out = w2d @ flat + bias.values[:, None]

    def backward(grad: np.ndarray) -> None:
        if _needs_graph(bias):
            _accumulate(bias, grad.sum(axis=1))
        if _needs_graph(weight):
            _accumulate(weight, (grad @ flat.T).reshape(weight.values.shape))
        if _needs_graph(x):
            dflat = w2d.T @ grad
            dcols = dflat.reshape(in_ch, width, frames)
            dpadded = np.zeros_like(padded)
            for k in range(width):
                dpadded[:, k * dilation : k * dilation + frames] += dcols[:, k, :]
            _accumulate(x, dpadded[:, pad : pad + frames] if pad else dpadded)

    return Tensor(out, parents=(x, weight, bias), backward=backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.values, 0)

    def backward(grad: np.ndarray) -> None:
        _accumulate(x, grad * (x.values > 0))

    return Tensor(out, parents=(x,), backward=backward)


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.values.shape != y.values.shape:
        raise ValueError(f"add shape mismatch: {x.values.shape} vs {y.values.shape}")
    out = x.values + y.values

    def backward(grad: np.ndarray) -> None:
        _accumulate(x, grad)
        _accumulate(y, grad)

    return Tensor(out, parents=(x, y), backward=backward)


def scale(x: Tensor, factor: float) -> Tensor:
    out = x.values * x.values.dtype.type(factor)

    def backward(grad: np.ndarray) -> None:
        _accumulate(x, grad * x.values.dtype.type(factor))

    return Tensor(out, parents=(x,), backward=backward)


def concat_channels(x: Tensor, y: Tensor) -> Tensor:
    if x.values.shape[1:] != y.values.shape[1:]:
        raise ValueError(f"concat frame mismatch: {x.values.shape} vs {y.values.shape}")
    out = np.concatenate([x.values, y.values], axis=0)
    split = x.values.shape[0]

    def backward(grad: np.ndarray) -> None:
        _accumulate(x, grad[:split])
        _accumulate(y, grad[split:])

    return Tensor(out, parents=(x, y), backward=backward)


def _softmax(values: np.ndarray) -> np.ndarray:
    shifted = values - values.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over the channel axis, one distribution per frame column."""
    out = _softmax(x.values)

    def backward(grad: np.ndarray) -> None:
        dot = (grad * out).sum(axis=0, keepdims=True)
        _accumulate(x, out * (grad - dot))

    return Tensor(out, parents=(x,), backward=backward)


def log_softmax_channels(x: Tensor) -> Tensor:
    shifted = x.values - x.values.max(axis=0, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))

    def backward(grad: np.ndarray) -> None:
        soft = np.exp(out)
        _accumulate(x, grad - soft * grad.sum(axis=0, keepdims=True))

    return Tensor(out, parents=(x,), backward=backward)


def cross_entropy_per_frame(logits: Tensor, labels) -> Tensor:
    """Mean over frames of the negative log-probability of the true class."""
    labels = np.asarray(getattr(labels, "labels", labels), dtype=np.int64)
    num_classes, frames = logits.values.shape
    if labels.shape != (frames,):
        raise ValueError(f"labels shape {labels.shape} != ({frames},)")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"label outside [0, {num_classes})")
    shifted = logits.values - logits.values.max(axis=0, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    cols = np.arange(frames)
    out = -log_probs[labels, cols].mean()

    def backward(grad: np.ndarray) -> None:
        soft = np.exp(log_probs)
        soft[labels, cols] -= 1
        _accumulate(logits, soft * (grad / frames))

    return Tensor(np.asarray(out, dtype=logits.values.dtype), parents=(logits,), backward=backward)


def truncated_smoothing_mse(log_probs: Tensor, clamp_tau: float) -> Tensor:
    """Mean over classes and adjacent-frame pairs of min(|delta|, clamp_tau)^2,
    where delta compares each frame against a detached previous frame, so the
    gradient flows only through the later frame of each pair."""
    num_classes, frames = log_probs.values.shape
    if frames < 2:
        warnings.warn("smoothing term needs at least 2 frames; returning 0", stacklevel=2)
        return Tensor(np.asarray(0.0, dtype=log_probs.values.dtype))
    delta = log_probs.values[:, 1:] - log_probs.values[:, :-1]
    clamped = np.clip(delta, -clamp_tau, clamp_tau)
    out = np.mean(clamped**2)
    denom = num_classes * (frames - 1)

    def backward(grad: np.ndarray) -> None:
        inside = np.abs(delta) <= clamp_tau
        dlater = 2.0 * delta * inside * (grad / denom)
        full = np.zeros_like(log_probs.values)
        full[:, 1:] = dlater
        _accumulate(log_probs, full)

    return Tensor(np.asarray(out, dtype=log_probs.values.dtype), parents=(log_probs,), backward=backward)


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            first={k: np.zeros_like(v) for k, v in params.items()},
            second={k: np.zeros_like(v) for k, v in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update, in place on `params` and `state`."""
    beta1, beta2 = betas
    state.step += 1
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    for name, p in params.items():
        g = grads[name]
        m = state.first[name]
        v = state.second[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)


def multistep_lr(base_lr: float, epoch: int, milestones: Iterable[int], gamma: float) -> float:
    """base_lr * gamma^(number of milestones at or before `epoch`)."""
    passed = sum(1 for m in milestones if m <= epoch)
    return base_lr * gamma**passed


def save_named_tensors(named: dict[str, np.ndarray], path: str | Path) -> None:
    """Versioned binary checkpoint: per tensor, name length + bytes, shape,
    then a little-endian float32 payload."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(bytes([CHECKPOINT_VERSION]))
        fh.write(struct.pack("<I", len(named)))
        for name, values in named.items():
            if values.dtype != np.float32:
                raise ValueError(f"checkpoint payload must be float32, {name} is {values.dtype}")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(bytes([values.ndim]))
            fh.write(struct.pack(f"<{values.ndim}I", *values.shape))
            fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def load_named_tensors(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    if raw[4] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {raw[4]}")
    (count,) = struct.unpack_from("<I", raw, 5)
    off = 9
    named: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        ndim = raw[off]
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape).copy()
        off += 4 * size
        named[name] = values
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes after {count} tensors")
    return named


def finite_difference_check(
    build: Callable[[], Tensor],
    inputs: list[Tensor],
    step: float = 1e-5,
    max_entries_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients of `build()` against central differences.

    `build` must recompute the scalar loss from the current values of
    `inputs`, which must be float64. Returns the worst scaled relative error
    |analytic - numeric| / max(|analytic|, |numeric|, 1).
    """
    for t in inputs:
        if t.values.dtype != np.float64:
            raise ValueError("finite-difference checks require float64 inputs")
        t.zero_grad()
    loss = build()
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.values) for t in inputs]
    worst = 0.0
    for t, grad in zip(inputs, analytic):
        flat = t.values.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries_per_tensor is not None and flat.size > max_entries_per_tensor:
            gen = rng if rng is not None else np.random.default_rng(0)
            indices = gen.choice(flat.size, size=max_entries_per_tensor, replace=False)
        for idx in indices:
            original = flat[idx]
            flat[idx] = original + step
            hi = float(build().values)
            flat[idx] = original - step
            lo = float(build().values)
            flat[idx] = original
            numeric = (hi - lo) / (2.0 * step)
            a = float(grad.reshape(-1)[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            worst = max(worst, err)
    return worst
