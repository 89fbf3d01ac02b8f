"""Binary feature files and in-memory multi-layer token containers.

A feature file stores, for one image, the patch-token grid and the CLS
vector of every extracted backbone layer.  The layout is fixed so files
are bit-exact across producers written in any language:

    magic             8 bytes, ``HYPFSAD\\0``
    format_version    uint32, currently 1
    layer_count       uint32
    grid_h, grid_w    uint32 each (patch grid, so n_patches = grid_h * grid_w)
    dim               uint32 (token dimensionality, shared by all layers)
    source_h, source_w uint32 each (pixel resolution the image was fed at)
    layer_indices     layer_count * uint32 (1-based backbone layer numbers)
    id_length, id     uint32 + UTF-8 bytes (image identifier)
    per layer         grid_h*grid_w*dim patch floats in row-major grid
                      order (top-left to bottom-right), then dim CLS floats

All integers are little-endian uint32; all token values are IEEE-754
binary32 little-endian.  Token arrays are kept as float32 in memory for
the same bit-exactness reason; score computation upcasts to float64.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FormatError, TruncationError, ValidationError

FEATURE_MAGIC = b"HYPFSAD\x00"
BANK_MAGIC = b"HYPBANK\x00"
FORMAT_VERSION = 1

_FIXED_HEADER = struct.Struct("<8s7I")
_U32 = struct.Struct("<I")


@dataclass(eq=False)
class LayerFeatures:
    """Tokens of one backbone layer: patches (n_patches x dim) plus CLS (dim,)."""

    layer_index: int
    patches: np.ndarray
    cls: np.ndarray

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LayerFeatures):
            return NotImplemented
        return (
            self.layer_index == other.layer_index
            and self.patches.dtype == other.patches.dtype
            and self.cls.dtype == other.cls.dtype
            and np.array_equal(self.patches, other.patches)
            and np.array_equal(self.cls, other.cls)
        )


@dataclass(eq=False)
class FeatureSet:
    """All extracted layers of one image, with its grid and source resolution."""

    image_id: str
    grid: tuple[int, int]
    source_resolution: tuple[int, int]
    layers: list[LayerFeatures]

    @property
    def n_patches(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def dim(self) -> int:
        return int(self.layers[0].patches.shape[1])

    @property
    def layer_indices(self) -> list[int]:
        return [layer.layer_index for layer in self.layers]

    def validate(self) -> None:
        """Raise ValidationError/DimensionError if any invariant is broken."""
        if not isinstance(self.image_id, str):
            raise ValidationError("image_id must be a string")
        if not self.layers:
            raise ValidationError("a FeatureSet needs at least one layer")
        grid_h, grid_w = self.grid
        src_h, src_w = self.source_resolution
        if min(grid_h, grid_w, src_h, src_w) < 1:
            raise DimensionError("grid and source resolution must be positive")
        dim = None
        seen: set[int] = set()
        for layer in self.layers:
            idx = layer.layer_index
            if not isinstance(idx, int) or idx < 0:
                raise ValidationError(f"layer_index must be a non-negative integer, got {idx!r}")
            if idx in seen:
                raise ValidationError(f"duplicate layer_index {idx}")
            seen.add(idx)
            if layer.patches.dtype != np.float32 or layer.cls.dtype != np.float32:
                raise ValidationError("token arrays must be float32")
            if layer.patches.ndim != 2 or layer.patches.shape[0] != grid_h * grid_w:
                raise DimensionError(
                    f"layer {idx}: patches must be ({grid_h * grid_w}, dim), "
                    f"got {layer.patches.shape}"
                )
            if dim is None:
                dim = int(layer.patches.shape[1])
                if dim < 1:
                    raise DimensionError("token dimension must be positive")
            elif layer.patches.shape[1] != dim:
                raise DimensionError("all layers must share one token dimension")
            if layer.cls.shape != (dim,):
                raise DimensionError(f"layer {idx}: cls must have shape ({dim},)")
            if not np.isfinite(layer.patches).all() or not np.isfinite(layer.cls).all():
                raise ValidationError(f"layer {idx}: tokens must be finite")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and tuple(self.grid) == tuple(other.grid)
            and tuple(self.source_resolution) == tuple(other.source_resolution)
            and self.layers == other.layers
        )


@dataclass
class FeatureFileHeader:
    """Everything a reader learns about a feature file before its payload."""

    format_version: int
    grid: tuple[int, int]
    dim: int
    source_resolution: tuple[int, int]
    layer_indices: list[int]
    image_id: str


def write_feature_file(feature_set: FeatureSet, path: str | os.PathLike) -> None:
    """Serialize a validated FeatureSet; never leaves a partial file behind."""
    feature_set.validate()
    grid_h, grid_w = feature_set.grid
    src_h, src_w = feature_set.source_resolution
    parts = [
        _FIXED_HEADER.pack(
            FEATURE_MAGIC,
            FORMAT_VERSION,
            len(feature_set.layers),
            grid_h,
            grid_w,
            feature_set.dim,
            src_h,
            src_w,
        )
    ]
    for layer in feature_set.layers:
        parts.append(_U32.pack(layer.layer_index))
    encoded_id = feature_set.image_id.encode("utf-8")
    parts.append(_U32.pack(len(encoded_id)))
    parts.append(encoded_id)
    for layer in feature_set.layers:
        parts.append(np.ascontiguousarray(layer.patches, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(layer.cls, dtype="<f4").tobytes())
    _atomic_write(path, b"".join(parts))


def _atomic_write(path: str | os.PathLike, payload: bytes) -> None:
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_path, path)
    except BaseException:
        try:
            os.unlink(tmp_path)
        except OSError:
            pass
        raise


def _read_exact(handle, count: int, what: str) -> bytes:
    data = handle.read(count)
    if len(data) != count:
        raise TruncationError(f"file ends inside {what}")
    return data


def _parse_header(handle) -> FeatureFileHeader:
    magic = _read_exact(handle, 8, "magic")
    if magic != FEATURE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    fixed = magic + _read_exact(handle, _FIXED_HEADER.size - 8, "header")
    (_, version, layer_count, grid_h, grid_w, dim, src_h, src_w) = _FIXED_HEADER.unpack(fixed)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    if min(layer_count, grid_h, grid_w, dim, src_h, src_w) < 1:
        raise DimensionError("header dimensions must all be positive")
    raw = _read_exact(handle, 4 * layer_count, "layer indices")
    layer_indices = [int(v) for v in np.frombuffer(raw, dtype="<u4")]
    (id_length,) = _U32.unpack(_read_exact(handle, 4, "image id length"))
    try:
        image_id = _read_exact(handle, id_length, "image id").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"image id is not valid UTF-8: {exc}") from exc
    return FeatureFileHeader(
        format_version=version,
        grid=(grid_h, grid_w),
        dim=dim,
        source_resolution=(src_h, src_w),
        layer_indices=layer_indices,
        image_id=image_id,
    )


def read_feature_header(path: str | os.PathLike) -> FeatureFileHeader:
    """Parse only the header of a feature file (cheap id/shape lookup)."""
    with open(path, "rb") as handle:
        return _parse_header(handle)


def read_feature_file(path: str | os.PathLike) -> FeatureSet:
    """Parse and validate a feature file written by any conforming producer."""
    with open(path, "rb") as handle:
        header = _parse_header(handle)
        n_patches = header.grid[0] * header.grid[1]
        layers = []
        for layer_index in header.layer_indices:
            patch_bytes = _read_exact(
                handle, 4 * n_patches * header.dim, f"layer {layer_index} patches"
            )
            cls_bytes = _read_exact(handle, 4 * header.dim, f"layer {layer_index} cls")
            patches = np.frombuffer(patch_bytes, dtype="<f4").reshape(n_patches, header.dim)
            cls = np.frombuffer(cls_bytes, dtype="<f4")
            layers.append(LayerFeatures(layer_index, patches.copy(), cls.copy()))
        if handle.read(1):
            raise FormatError("trailing bytes after declared payload")
    feature_set = FeatureSet(
        image_id=header.image_id,
        grid=header.grid,
        source_resolution=header.source_resolution,
        layers=layers,
    )
    feature_set.validate()
    return feature_set
