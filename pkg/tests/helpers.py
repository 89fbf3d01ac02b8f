"""Shared constructors for test fixtures."""

from __future__ import annotations

import numpy as np

from hypermatch import FeatureSet, LayerFeatures, build_memory_bank


def orthonormal_patches(rng: np.random.Generator, n_patches: int, dim: int) -> np.ndarray:
    """Rows form an orthonormal set; requires dim >= n_patches."""
    if dim < n_patches:
        raise ValueError("need dim >= n_patches for orthonormal rows")
    q, r = np.linalg.qr(rng.standard_normal((dim, n_patches)))
    q = q * np.sign(np.diag(r))
    return np.ascontiguousarray(q.T)


def orthonormal_featureset(
    rng: np.random.Generator,
    image_id: str = "support",
    grid: tuple[int, int] = (3, 3),
    dim: int = 16,
    layer_indices: tuple[int, ...] = (1, 2),
) -> FeatureSet:
    """A feature set whose patch rows are orthonormal within every layer."""
    n_patches = grid[0] * grid[1]
    layers = []
    for layer_index in layer_indices:
        patches = orthonormal_patches(rng, n_patches, dim)
        cls = patches.mean(axis=0)
        cls = cls / np.linalg.norm(cls)
        layers.append(
            LayerFeatures(layer_index, patches.astype(np.float32), cls.astype(np.float32))
        )
    return FeatureSet(image_id, grid, (grid[0] * 14, grid[1] * 14), layers)


def random_featureset(
    rng: np.random.Generator,
    image_id: str = "image",
    grid: tuple[int, int] = (2, 3),
    dim: int = 8,
    layer_indices: tuple[int, ...] = (0, 5),
) -> FeatureSet:
    n_patches = grid[0] * grid[1]
    layers = [
        LayerFeatures(
            layer_index,
            rng.standard_normal((n_patches, dim)).astype(np.float32),
            rng.standard_normal(dim).astype(np.float32),
        )
        for layer_index in layer_indices
    ]
    return FeatureSet(image_id, grid, (64, 96), layers)


def single_support_bank(features: FeatureSet, normalization: str = "l2"):
    return build_memory_bank([features], normalization)
