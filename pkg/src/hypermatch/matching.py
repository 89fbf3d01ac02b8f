"""Support memory banks and query-to-bank patch matching.

A memory bank concatenates the patch tokens of all support images per
layer (image-major, each image's grid in row-major order) next to the
per-image CLS vectors.  Matching reconstructs every query patch as a
convex combination of support patches -- the weights come from one of the
lookup strategies -- and scores the patch by its cosine distance to that
reconstruction, averaged over layers.

Bank tokens are stored float32 (mirroring the file format); every
similarity and score is computed in float64.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionError, FormatError, TruncationError, ValidationError
from .features import (
    BANK_MAGIC,
    FORMAT_VERSION,
    FeatureSet,
    LayerFeatures,
    _atomic_write,
    _read_exact,
)
from .lookup import LookupStrategy, weights_matrix

NORMALIZATIONS = ("none", "l2")

_BANK_HEADER = struct.Struct("<8s8I")
_EPS = 1e-12


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Row-wise L2 normalization in float64; all-zero rows stay zero."""
    upcast = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(upcast, axis=-1, keepdims=True)
    return upcast / np.where(norms < _EPS, 1.0, norms)


@dataclass
class BankLayer:
    """Stacked support tokens of one layer: patches (K*N_p x D), cls (K x D)."""

    layer_index: int
    patches: np.ndarray
    cls: np.ndarray


@dataclass
class MemoryBank:
    """Per-layer support memory with its grid, shot count, and normalization."""

    layers: list[BankLayer]
    grid: tuple[int, int]
    shot_count: int
    normalization: str

    @property
    def dim(self) -> int:
        return int(self.layers[0].patches.shape[1])

    @property
    def layer_indices(self) -> list[int]:
        return [layer.layer_index for layer in self.layers]


@dataclass
class AnomalyMap:
    """Patch-grid anomaly scores for one query image (row-major grid)."""

    grid: np.ndarray
    image_id: str
    layer_indices: list[int]


def build_memory_bank(supports: list[FeatureSet], normalization: str = "l2") -> MemoryBank:
    """Stack support features image-major into one bank per layer."""
    if normalization not in NORMALIZATIONS:
        raise ValidationError(f"normalization must be one of {NORMALIZATIONS}")
    if not supports:
        raise ValidationError("a memory bank needs at least one support image")
    reference = supports[0]
    reference.validate()
    for candidate in supports[1:]:
        candidate.validate()
        if candidate.grid != reference.grid:
            raise DimensionError("support images disagree on patch grid")
        if candidate.layer_indices != reference.layer_indices:
            raise DimensionError("support images disagree on layer set")
        if candidate.dim != reference.dim:
            raise DimensionError("support images disagree on token dimension")
    layers = []
    for position, layer_index in enumerate(reference.layer_indices):
        patches = np.concatenate([fs.layers[position].patches for fs in supports], axis=0)
        cls = np.stack([fs.layers[position].cls for fs in supports], axis=0)
        if normalization == "l2":
            patches = normalize_rows(patches).astype(np.float32)
            cls = normalize_rows(cls).astype(np.float32)
        layers.append(BankLayer(layer_index, patches, cls))
    return MemoryBank(layers, reference.grid, len(supports), normalization)


def hyperedge_reconstruct(
    query_layer: LayerFeatures, bank_layer: BankLayer, strategy: LookupStrategy
) -> np.ndarray:
    """Reconstruct each query patch as its strategy-weighted support combination.

    Row i equals ``w_i @ P`` where ``w_i = strategy(q_i @ P.T)`` and P is the
    bank layer's patch matrix.  Inputs are used as given; apply the bank's
    normalization to the query before calling when it was built with one.
    """
    queries = np.asarray(query_layer.patches, dtype=np.float64)
    bank = np.asarray(bank_layer.patches, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != bank.shape[1]:
        raise DimensionError(
            f"query dim {queries.shape} does not match bank dim {bank.shape[1]}"
        )
    similarities = queries @ bank.T
    weights = weights_matrix(similarities, strategy)
    return weights @ bank


def _row_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine of corresponding rows; rows with vanishing norm score zero."""
    numerator = np.einsum("ij,ij->i", a, b)
    denominator = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    safe = denominator > _EPS
    return np.where(safe, numerator / np.where(safe, denominator, 1.0), 0.0)


def anomaly_map(query: FeatureSet, bank: MemoryBank, strategy: LookupStrategy) -> AnomalyMap:
    """Per-patch cosine distance to the reconstruction, averaged over layers."""
    query.validate()
    if query.grid != bank.grid:
        raise DimensionError(
            f"query grid {query.grid} does not match bank grid {bank.grid}"
        )
    if query.layer_indices != bank.layer_indices:
        raise DimensionError(
            f"query layers {query.layer_indices} do not match bank layers {bank.layer_indices}"
        )
    if query.dim != bank.dim:
        raise DimensionError(f"query dim {query.dim} does not match bank dim {bank.dim}")
    per_layer = np.empty((len(bank.layers), query.n_patches), dtype=np.float64)
    for position, bank_layer in enumerate(bank.layers):
        patches = query.layers[position].patches
        if bank.normalization == "l2":
            patches = normalize_rows(patches)
        prepared = LayerFeatures(bank_layer.layer_index, patches, query.layers[position].cls)
        reconstruction = hyperedge_reconstruct(prepared, bank_layer, strategy)
        queries = np.asarray(patches, dtype=np.float64)
        per_layer[position] = 1.0 - _row_cosine(queries, reconstruction)
    scores = np.clip(per_layer.mean(axis=0), 0.0, 2.0)
    return AnomalyMap(scores.reshape(query.grid), query.image_id, list(bank.layer_indices))


def upsample_map(
    amap: AnomalyMap | np.ndarray,
    out_height: int,
    out_width: int,
    smooth_sigma: float = 0.0,
) -> np.ndarray:
    """Bilinear upsampling (half-pixel centers) with optional Gaussian smoothing."""
    grid = np.asarray(amap.grid if isinstance(amap, AnomalyMap) else amap, dtype=np.float64)
    if grid.ndim != 2 or grid.size == 0:
        raise DimensionError("expected a non-empty 2-D score grid")
    if out_height < 1 or out_width < 1:
        raise DimensionError("output size must be positive")
    if smooth_sigma < 0:
        raise ValidationError("smooth_sigma must be non-negative")
    resized = _bilinear_axis(_bilinear_axis(grid, out_height, axis=0), out_width, axis=1)
    if smooth_sigma > 0:
        resized = ndimage.gaussian_filter(resized, sigma=smooth_sigma, mode="reflect")
    return resized


def _bilinear_axis(grid: np.ndarray, out_size: int, axis: int) -> np.ndarray:
    in_size = grid.shape[axis]
    centers = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
    centers = np.clip(centers, 0.0, in_size - 1.0)
    lower = np.floor(centers).astype(np.intp)
    upper = np.minimum(lower + 1, in_size - 1)
    fraction = centers - lower
    take_lower = np.take(grid, lower, axis=axis)
    take_upper = np.take(grid, upper, axis=axis)
    shape = [1, 1]
    shape[axis] = out_size
    # v0 + (v1 - v0) * t is exact for constant inputs.
    return take_lower + (take_upper - take_lower) * fraction.reshape(shape)


def write_bank_file(bank: MemoryBank, path: str | os.PathLike) -> None:
    """Serialize a memory bank with the same binary conventions as feature files."""
    grid_h, grid_w = bank.grid
    parts = [
        _BANK_HEADER.pack(
            BANK_MAGIC,
            FORMAT_VERSION,
            len(bank.layers),
            grid_h,
            grid_w,
            bank.dim,
            bank.shot_count,
            NORMALIZATIONS.index(bank.normalization),
            0,  # reserved
        )
    ]
    for layer in bank.layers:
        parts.append(struct.pack("<I", layer.layer_index))
    for layer in bank.layers:
        parts.append(np.ascontiguousarray(layer.patches, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(layer.cls, dtype="<f4").tobytes())
    _atomic_write(path, b"".join(parts))


def read_bank_file(path: str | os.PathLike) -> MemoryBank:
    with open(path, "rb") as handle:
        magic = _read_exact(handle, 8, "magic")
        if magic != BANK_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {BANK_MAGIC!r}")
        fixed = magic + _read_exact(handle, _BANK_HEADER.size - 8, "bank header")
        (_, version, layer_count, grid_h, grid_w, dim, shots, norm_code, _pad) = (
            _BANK_HEADER.unpack(fixed)
        )
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}")
        if min(layer_count, grid_h, grid_w, dim, shots) < 1:
            raise DimensionError("bank header dimensions must all be positive")
        if norm_code >= len(NORMALIZATIONS):
            raise FormatError(f"unknown normalization code {norm_code}")
        raw = _read_exact(handle, 4 * layer_count, "layer indices")
        layer_indices = [int(v) for v in np.frombuffer(raw, dtype="<u4")]
        rows = shots * grid_h * grid_w
        layers = []
        for layer_index in layer_indices:
            patch_bytes = _read_exact(handle, 4 * rows * dim, f"layer {layer_index} patches")
            cls_bytes = _read_exact(handle, 4 * shots * dim, f"layer {layer_index} cls")
            patches = np.frombuffer(patch_bytes, dtype="<f4").reshape(rows, dim)
            cls = np.frombuffer(cls_bytes, dtype="<f4").reshape(shots, dim)
            if not np.isfinite(patches).all() or not np.isfinite(cls).all():
                raise ValidationError(f"layer {layer_index}: bank tokens must be finite")
            layers.append(BankLayer(layer_index, patches.copy(), cls.copy()))
        if handle.read(1):
            raise FormatError("trailing bytes after declared payload")
    return MemoryBank(layers, (grid_h, grid_w), shots, NORMALIZATIONS[norm_code])
