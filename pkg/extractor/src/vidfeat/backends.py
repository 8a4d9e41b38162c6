"""Embedding backends.

`StubBackend` is a deterministic random-projection encoder available for
every registry row; it exists so the extraction pipeline (decoding, clip
planning, cache layout) can run and be tested at full fidelity on machines
without encoder weights. `TorchResNet50Backend` runs the real ResNet-50
architecture via torchvision (optionally loading a checkpoint; without one
the weights are a seeded random init, which still yields the architecture's
exact feature dimensionality)."""

from __future__ import annotations

import hashlib

import numpy as np

POOL_GRID = 8  # stub pools frames to POOL_GRID^2 cells per channel


def stable_seed(*parts: str) -> int:
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class StubBackend:
    """Seeded random projection of pooled pixels; deterministic per config."""

    def __init__(self, feat_dim: int, seed: int):
        self.feat_dim = feat_dim
        rng = np.random.default_rng(seed)
        inputs = 3 * POOL_GRID * POOL_GRID
        self._projection = (
            rng.standard_normal((feat_dim, inputs)) / np.sqrt(inputs)
        ).astype(np.float32)

    def _pool(self, images: np.ndarray) -> np.ndarray:
        count, channels, height, width = images.shape
        grid_h, grid_w = height // POOL_GRID, width // POOL_GRID
        trimmed = images[:, :, : grid_h * POOL_GRID, : grid_w * POOL_GRID]
        pooled = trimmed.reshape(count, channels, POOL_GRID, grid_h, POOL_GRID, grid_w)
        return pooled.mean(axis=(3, 5)).reshape(count, -1)

    def embed_images(self, images: np.ndarray) -> np.ndarray:
        return self._pool(images.astype(np.float32)) @ self._projection.T

    def embed_clips(self, clips: np.ndarray) -> np.ndarray:
        # [count, 3, clip_len, H, W]: average over time, then embed as images
        return self.embed_images(clips.astype(np.float32).mean(axis=2))


class TorchResNet50Backend:
    """torchvision ResNet-50 up to global average pooling (2048-d)."""

    feat_dim = 2048

    def __init__(self, checkpoint: str | None = None, seed: int = 0, batch_size: int = 8):
        import torch
        from torchvision.models import resnet50

        self._torch = torch
        self.batch_size = batch_size
        torch.manual_seed(seed)
        model = resnet50(weights=None)
        if checkpoint:
            state = torch.load(checkpoint, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
        model.fc = torch.nn.Identity()
        model.eval()
        self._model = model

    def embed_images(self, images: np.ndarray) -> np.ndarray:
        torch = self._torch
        chunks = []
        with torch.no_grad():
            for start in range(0, images.shape[0], self.batch_size):
                batch = torch.from_numpy(images[start : start + self.batch_size])
                chunks.append(self._model(batch).numpy())
        features = np.concatenate(chunks, axis=0)
        if features.shape[1] != self.feat_dim:
            raise RuntimeError(f"resnet50 produced {features.shape[1]}-d features, expected 2048")
        return features


def make_backend(name: str, feat_dim: int, seed: int, checkpoint: str | None = None):
    if name == "stub":
        return StubBackend(feat_dim, seed)
    if name == "torch-resnet50":
        if feat_dim != TorchResNet50Backend.feat_dim:
            raise ValueError(f"torch-resnet50 emits 2048-d features, config expects {feat_dim}")
        return TorchResNet50Backend(checkpoint=checkpoint, seed=seed)
    raise ValueError(f"unknown backend {name!r}")
