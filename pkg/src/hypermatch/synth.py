"""Synthetic feature cases with planted anomalies, and pipeline evaluation.

A case plants a fixed spatial layout of cluster assignments (shared by
every image, like parts of one object category), draws each patch token
as its cluster center plus Gaussian noise re-normalized to unit length,
and displaces anomalous cells toward a held-out direction orthogonal to
every cluster center.  Support grids may additionally carry distractor
tokens from an independent far cluster, which a sparse lookup should
ignore exactly and a dense lookup cannot.

Randomness is counter-based: every draw comes from a Philox generator
keyed by (seed, stream index), so cases are reproducible per field and
insensitive to generation order.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .features import FeatureSet, LayerFeatures
from .lookup import LookupStrategy
from .matching import anomaly_map, build_memory_bank, normalize_rows
from .metrics import EvalReport, SegmentationCase, compute_report
from .scoring import PoolingSpec, ScoreRecord, cls_score, fuse, pool_map

_STREAM_DIRECTIONS = 0
_STREAM_PATTERN = 1
_STREAM_SUPPORTS = 2
_STREAM_QUERIES = 3


def _stream(seed: int, index: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SynthSpec:
    """Knobs of one synthetic case; defaults give a mixed, separable suite."""

    seed: int = 0
    shots: int = 2
    grid: tuple[int, int] = (8, 8)
    dim: int = 32
    layer_count: int = 2
    n_clusters: int = 4
    query_count: int = 20
    anomaly_rate: float = 0.5
    anomaly_cells: int = 4
    anomaly_shift: float = 0.8
    distractor_count: int = 0
    noise_sigma: float = 0.05

    def validate(self) -> None:
        grid_h, grid_w = self.grid
        n_cells = grid_h * grid_w
        if min(grid_h, grid_w, self.dim, self.layer_count, self.shots) < 1:
            raise ValidationError("grid, dim, layer_count, and shots must be positive")
        if self.n_clusters < 1:
            raise ValidationError("n_clusters must be positive")
        if self.n_clusters + 2 > self.dim:
            raise ValidationError(
                "dim must be at least n_clusters + 2 so the anomaly and distractor "
                "directions can be orthogonal to every cluster center"
            )
        if self.query_count < 1:
            raise ValidationError("query_count must be positive")
        if not 0.0 <= self.anomaly_rate <= 1.0:
            raise ValidationError("anomaly_rate must lie in [0, 1]")
        if not 1 <= self.anomaly_cells <= n_cells:
            raise ValidationError(f"anomaly_cells must lie in [1, {n_cells}]")
        if not 0 <= self.distractor_count <= n_cells:
            raise ValidationError(f"distractor_count must lie in [0, {n_cells}]")
        if self.anomaly_shift < 0 or self.noise_sigma < 0:
            raise ValidationError("anomaly_shift and noise_sigma must be non-negative")


@dataclass
class SynthCase:
    """Generated supports, queries, image labels, and planted pixel masks."""

    spec: SynthSpec
    supports: list[FeatureSet]
    queries: list[FeatureSet]
    labels: np.ndarray
    masks: list[np.ndarray]


def generate(spec: SynthSpec) -> SynthCase:
    """Deterministically build the case described by ``spec``."""
    spec.validate()
    grid_h, grid_w = spec.grid
    n_cells = grid_h * grid_w

    directions_rng = _stream(spec.seed, _STREAM_DIRECTIONS)
    gaussian = directions_rng.standard_normal((spec.dim, spec.n_clusters + 2))
    basis, upper = np.linalg.qr(gaussian)
    basis = basis * np.sign(np.diagonal(upper))
    centers = basis[:, : spec.n_clusters].T
    anomaly_direction = basis[:, spec.n_clusters]
    distractor_direction = basis[:, spec.n_clusters + 1]

    pattern_rng = _stream(spec.seed, _STREAM_PATTERN)
    pattern = pattern_rng.integers(0, spec.n_clusters, size=n_cells)
    base_tokens = centers[pattern]

    supports_rng = _stream(spec.seed, _STREAM_SUPPORTS)
    supports = []
    for index in range(spec.shots):
        distractor_cells = (
            supports_rng.choice(n_cells, size=spec.distractor_count, replace=False)
            if spec.distractor_count
            else np.empty(0, dtype=np.intp)
        )
        layers = []
        for layer_index in range(1, spec.layer_count + 1):
            tokens = normalize_rows(
                base_tokens
                + spec.noise_sigma * supports_rng.standard_normal((n_cells, spec.dim))
            )
            if distractor_cells.size:
                tokens[distractor_cells] = normalize_rows(
                    distractor_direction
                    + spec.noise_sigma
                    * supports_rng.standard_normal((distractor_cells.size, spec.dim))
                )
            layers.append(_layer(layer_index, tokens))
        supports.append(
            FeatureSet(f"support_{index:03d}", spec.grid, spec.grid, layers)
        )

    queries_rng = _stream(spec.seed, _STREAM_QUERIES)
    n_anomalous = int(round(spec.anomaly_rate * spec.query_count))
    anomalous = set(
        queries_rng.choice(spec.query_count, size=n_anomalous, replace=False).tolist()
    )
    labels = np.zeros(spec.query_count, dtype=np.int64)
    queries = []
    masks = []
    for index in range(spec.query_count):
        mask = np.zeros(n_cells, dtype=np.uint8)
        cells = np.empty(0, dtype=np.intp)
        if index in anomalous:
            labels[index] = 1
            cells = queries_rng.choice(n_cells, size=spec.anomaly_cells, replace=False)
            mask[cells] = 1
        layers = []
        for layer_index in range(1, spec.layer_count + 1):
            tokens = normalize_rows(
                base_tokens
                + spec.noise_sigma * queries_rng.standard_normal((n_cells, spec.dim))
            )
            if cells.size:
                tokens[cells] = normalize_rows(
                    tokens[cells] + spec.anomaly_shift * anomaly_direction
                )
            layers.append(_layer(layer_index, tokens))
        queries.append(FeatureSet(f"query_{index:03d}", spec.grid, spec.grid, layers))
        masks.append(mask.reshape(spec.grid))
    return SynthCase(spec, supports, queries, labels, masks)


def _layer(layer_index: int, tokens: np.ndarray) -> LayerFeatures:
    cls = normalize_rows(tokens.mean(axis=0, keepdims=True))[0]
    return LayerFeatures(
        layer_index, tokens.astype(np.float32), cls.astype(np.float32)
    )


def evaluate_case(
    case: SynthCase,
    strategy: LookupStrategy = LookupStrategy("sparse"),
    pooling: PoolingSpec = PoolingSpec("max"),
    fusion_weight: float = 0.5,
    normalization: str = "l2",
    fpr_limit: float = 0.3,
) -> tuple[list[ScoreRecord], EvalReport]:
    """Run the full pipeline on an in-memory case and evaluate it."""
    bank = build_memory_bank(case.supports, normalization)
    records = []
    segmentation = []
    for query, mask in zip(case.queries, case.masks):
        amap = anomaly_map(query, bank, strategy)
        s_map = pool_map(amap, pooling)
        s_cls = cls_score(query, bank)
        records.append(
            ScoreRecord(
                query.image_id,
                s_map,
                s_cls,
                fuse(s_map, s_cls, fusion_weight),
                fusion_weight,
            )
        )
        segmentation.append(SegmentationCase(amap.grid, mask))
    scores = [record.s_image for record in records]
    report = compute_report(scores, case.labels, segmentation, fpr_limit=fpr_limit)
    return records, report


ABLATION_AXES = ("lookup", "lambda", "pooling")

_DEFAULT_VALUES = {
    "lookup": ("max", "top10", "dense", "sparse"),
    "lambda": ("0", "0.5", "1"),
    "pooling": ("top10", "top1%", "max"),
}


def run_ablation(
    case: SynthCase, axis: str, values: list[str] | None = None
) -> list[tuple[str, EvalReport]]:
    """Evaluate the case once per value of the chosen axis, defaults elsewhere."""
    if axis not in ABLATION_AXES:
        raise ValidationError(f"ablation axis must be one of {ABLATION_AXES}")
    chosen = list(values) if values else list(_DEFAULT_VALUES[axis])
    if not chosen:
        raise ValidationError("ablation needs at least one value")
    rows = []
    for value in chosen:
        if axis == "lookup":
            strategy = LookupStrategy.parse(value)
            _, report = evaluate_case(case, strategy=strategy)
            rows.append((strategy.label(), report))
        elif axis == "lambda":
            weight = float(value)
            _, report = evaluate_case(case, fusion_weight=weight)
            rows.append((f"{weight:g}", report))
        else:
            pooling = PoolingSpec.parse(value)
            _, report = evaluate_case(case, pooling=pooling)
            rows.append((pooling.label(), report))
    return rows
