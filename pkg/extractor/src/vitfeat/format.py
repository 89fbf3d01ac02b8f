"""Writer/reader for the binary feature-file interchange format.

One file carries all extracted tokens for one image. Layout, little-endian:

    magic   "HYPFSAD\\0"
    u32 x 7 version(=1), layer_count, grid_h, grid_w, dim, src_h, src_w
    u32 x layer_count   layer indices
    u32 + bytes         UTF-8 image id (length-prefixed)
    per layer           patches (grid_h*grid_w, dim) row-major f32,
                        then cls (dim,) f32

Writes are atomic (temp file + rename) and reads reject anything
malformed: wrong magic, unknown version, zero dimensions, short files,
trailing bytes, non-finite values.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"HYPFSAD\x00"
VERSION = 1

_HEADER = struct.Struct("<8s7I")
_U32 = struct.Struct("<I")


class FeatureFormatError(ValueError):
    """Raised when a file does not obey the interchange layout."""


@dataclass
class ImageFeatures:
    """Extracted tokens for one image: per-layer patch grids plus CLS."""

    image_id: str
    grid: tuple[int, int]
    source_resolution: tuple[int, int]
    layer_indices: list[int]
    patches: list[np.ndarray] = field(default_factory=list)  # each (N_p, dim) f32
    cls: list[np.ndarray] = field(default_factory=list)  # each (dim,) f32

    @property
    def dim(self) -> int:
        return int(self.patches[0].shape[1])

    def check(self) -> None:
        grid_h, grid_w = self.grid
        src_h, src_w = self.source_resolution
        if min(grid_h, grid_w, src_h, src_w) < 1:
            raise FeatureFormatError("grid and source resolution must be positive")
        if not self.layer_indices:
            raise FeatureFormatError("need at least one layer")
        if len(set(self.layer_indices)) != len(self.layer_indices):
            raise FeatureFormatError("layer indices must be unique")
        if len(self.patches) != len(self.layer_indices) or len(self.cls) != len(
            self.layer_indices
        ):
            raise FeatureFormatError("per-layer arrays out of step with layer indices")
        expected_rows = grid_h * grid_w
        for tokens, cls in zip(self.patches, self.cls):
            if tokens.dtype != np.float32 or cls.dtype != np.float32:
                raise FeatureFormatError("token arrays must be float32")
            if tokens.shape != (expected_rows, self.dim) or cls.shape != (self.dim,):
                raise FeatureFormatError(
                    f"expected patches ({expected_rows}, {self.dim}) and cls ({self.dim},), "
                    f"got {tokens.shape} and {cls.shape}"
                )
            if not (np.isfinite(tokens).all() and np.isfinite(cls).all()):
                raise FeatureFormatError("token arrays must be finite")


def save(features: ImageFeatures, path: str | os.PathLike) -> None:
    features.check()
    grid_h, grid_w = features.grid
    src_h, src_w = features.source_resolution
    blob = bytearray(
        _HEADER.pack(
            MAGIC, VERSION, len(features.layer_indices), grid_h, grid_w,
            features.dim, src_h, src_w,
        )
    )
    for index in features.layer_indices:
        blob += _U32.pack(index)
    name = features.image_id.encode("utf-8")
    blob += _U32.pack(len(name))
    blob += name
    for tokens, cls in zip(features.patches, features.cls):
        blob += np.ascontiguousarray(tokens, dtype="<f4").tobytes()
        blob += np.ascontiguousarray(cls, dtype="<f4").tobytes()

    directory = os.path.dirname(os.fspath(path)) or "."
    fd, staging = tempfile.mkstemp(dir=directory, suffix=".part")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(blob)
        os.replace(staging, path)
    except BaseException:
        try:
            os.unlink(staging)
        except OSError:
            pass
        raise


def _take(handle, count: int, what: str) -> bytes:
    data = handle.read(count)
    if len(data) != count:
        raise FeatureFormatError(f"file ends inside {what}")
    return data


def load(path: str | os.PathLike) -> ImageFeatures:
    with open(path, "rb") as handle:
        fixed = _take(handle, _HEADER.size, "header")
        magic, version, layer_count, grid_h, grid_w, dim, src_h, src_w = _HEADER.unpack(fixed)
        if magic != MAGIC:
            raise FeatureFormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise FeatureFormatError(f"unsupported version {version}")
        if min(layer_count, grid_h, grid_w, dim, src_h, src_w) < 1:
            raise FeatureFormatError("header dimensions must all be positive")
        indices = [
            int(v)
            for v in np.frombuffer(_take(handle, 4 * layer_count, "layer indices"), "<u4")
        ]
        (name_length,) = _U32.unpack(_take(handle, 4, "image id length"))
        try:
            image_id = _take(handle, name_length, "image id").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FeatureFormatError(f"image id is not UTF-8: {exc}") from exc
        rows = grid_h * grid_w
        patches, cls = [], []
        for index in indices:
            raw = _take(handle, 4 * rows * dim, f"layer {index} patches")
            patches.append(np.frombuffer(raw, "<f4").reshape(rows, dim).copy())
            raw = _take(handle, 4 * dim, f"layer {index} cls")
            cls.append(np.frombuffer(raw, "<f4").copy())
        if handle.read(1):
            raise FeatureFormatError("trailing bytes after payload")
    result = ImageFeatures(
        image_id, (grid_h, grid_w), (src_h, src_w), indices, patches, cls
    )
    result.check()
    return result
