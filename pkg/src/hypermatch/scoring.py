"""Image-level scores: map pooling, CLS nearest-neighbor distance, fusion."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .features import FeatureSet
from .matching import AnomalyMap, MemoryBank, normalize_rows

_TOPN_RE = re.compile(r"^top[_-]?n?[:=]?(\d+)$")
_TOPPCT_RE = re.compile(r"^top[_-]?(?:pct[:=]?)?(\d+(?:\.\d+)?)%?$")


@dataclass(frozen=True)
class PoolingSpec:
    """How a patch-grid map collapses to one scalar.

    ``max`` takes the largest cell, ``top_n`` averages the n largest cells,
    ``top_pct`` averages the ceil(pct/100 * n_cells) largest (at least one).
    """

    kind: str
    n: int | None = None
    pct: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("max", "top_n", "top_pct"):
            raise ValidationError(f"unknown pooling kind {self.kind!r}")
        if self.kind == "top_n" and (self.n is None or self.n < 1):
            raise ValidationError("top_n pooling needs n >= 1")
        if self.kind == "top_pct" and (self.pct is None or not 0 < self.pct <= 100):
            raise ValidationError("top_pct pooling needs 0 < pct <= 100")

    @classmethod
    def parse(cls, text: str) -> "PoolingSpec":
        """Parse CLI spellings: ``max``, ``top10``, ``topn:10``, ``top1%``, ``toppct:0.5``."""
        token = text.strip().lower()
        if token == "max":
            return cls("max")
        if token.endswith("%") or "pct" in token:
            match = _TOPPCT_RE.match(token)
            if match:
                return cls("top_pct", pct=float(match.group(1)))
        match = _TOPN_RE.match(token)
        if match:
            return cls("top_n", n=int(match.group(1)))
        raise ValidationError(f"cannot parse pooling spec {text!r}")

    def label(self) -> str:
        if self.kind == "top_n":
            return f"top{self.n}"
        if self.kind == "top_pct":
            return f"top{self.pct:g}%"
        return "max"


def pool_map(amap: AnomalyMap | np.ndarray, spec: PoolingSpec) -> float:
    """Collapse a patch-grid map to one image score."""
    grid = np.asarray(amap.grid if isinstance(amap, AnomalyMap) else amap, dtype=np.float64)
    cells = grid.ravel()
    if cells.size == 0:
        raise ValidationError("cannot pool an empty map")
    if not np.isfinite(cells).all():
        raise ValidationError("cannot pool non-finite scores")
    if spec.kind == "max":
        return float(cells.max())
    if spec.kind == "top_n":
        count = spec.n
        if count > cells.size:
            raise ValidationError(f"top_n pooling needs n <= {cells.size}, got {count}")
    else:
        count = max(1, math.ceil(spec.pct / 100.0 * cells.size))
    largest = np.partition(cells, cells.size - count)[cells.size - count :]
    return float(largest.mean())


def cls_score(query: FeatureSet, bank: MemoryBank) -> float:
    """Cosine distance from the query CLS to its nearest support CLS, layer-averaged.

    Cosine is always computed on direction (unit-normalized in float64)
    regardless of how the bank stores its rows, which keeps the score
    inside [0, 2].
    """
    query.validate()
    if query.layer_indices != bank.layer_indices:
        raise ValidationError(
            f"query layers {query.layer_indices} do not match bank layers {bank.layer_indices}"
        )
    if query.dim != bank.dim:
        raise ValidationError(f"query dim {query.dim} does not match bank dim {bank.dim}")
    distances = np.empty(len(bank.layers), dtype=np.float64)
    for position, bank_layer in enumerate(bank.layers):
        query_direction = normalize_rows(query.layers[position].cls[None, :])[0]
        support_directions = normalize_rows(bank_layer.cls)
        distances[position] = 1.0 - float((support_directions @ query_direction).max())
    return float(np.clip(distances.mean(), 0.0, 2.0))


def fuse(s_map: float, s_cls: float, weight: float = 0.5) -> float:
    """Convex combination ``weight * s_map + (1 - weight) * s_cls``."""
    if not 0.0 <= weight <= 1.0:
        raise ValidationError(f"fusion weight must lie in [0, 1], got {weight}")
    if not (math.isfinite(s_map) and math.isfinite(s_cls)):
        raise ValidationError("cannot fuse non-finite scores")
    return weight * s_map + (1.0 - weight) * s_cls


@dataclass
class ScoreRecord:
    """One query image's map, CLS, and fused scores at a given fusion weight."""

    image_id: str
    s_map: float
    s_cls: float
    s_image: float
    fusion_weight: float

    def __post_init__(self) -> None:
        expected = fuse(self.s_map, self.s_cls, self.fusion_weight)
        if abs(self.s_image - expected) > 1e-12:
            raise ValidationError(
                f"s_image {self.s_image} does not equal the fused score {expected}"
            )
