"""Training-free few-shot anomaly detection on pre-extracted ViT features.

Queries are scored by reconstructing each patch token from a small memory
bank of support tokens; the lookup weights come from a simplex projection
(or softmax variants), so a query that the bank explains well reconstructs
almost exactly and scores near zero.
"""

from .errors import (
    DimensionError,
    FormatError,
    MetricUndefinedError,
    TruncationError,
    ValidationError,
)
from .features import (
    FeatureFileHeader,
    FeatureSet,
    LayerFeatures,
    read_feature_file,
    read_feature_header,
    write_feature_file,
)
from .lookup import (
    LookupStrategy,
    RetrievalWeights,
    dense_lookup,
    dense_matrix,
    max_lookup,
    max_matrix,
    sparsemax,
    sparsemax_matrix,
    sparsemax_oracle,
    topn_lookup,
    topn_matrix,
    weights_matrix,
)
from .matching import (
    AnomalyMap,
    BankLayer,
    MemoryBank,
    anomaly_map,
    build_memory_bank,
    hyperedge_reconstruct,
    normalize_rows,
    read_bank_file,
    upsample_map,
    write_bank_file,
)
from .metrics import (
    EvalReport,
    SegmentationCase,
    auroc,
    average_precision,
    compute_report,
    f1_max,
    pixel_metrics,
    pro,
)
from .scoring import PoolingSpec, ScoreRecord, cls_score, fuse, pool_map
from .synth import SynthCase, SynthSpec, evaluate_case, generate, run_ablation

__version__ = "0.1.0"

__all__ = [
    "AnomalyMap",
    "BankLayer",
    "DimensionError",
    "EvalReport",
    "FeatureFileHeader",
    "FeatureSet",
    "FormatError",
    "LayerFeatures",
    "LookupStrategy",
    "MemoryBank",
    "MetricUndefinedError",
    "PoolingSpec",
    "RetrievalWeights",
    "ScoreRecord",
    "SegmentationCase",
    "SynthCase",
    "SynthSpec",
    "TruncationError",
    "ValidationError",
    "anomaly_map",
    "auroc",
    "average_precision",
    "build_memory_bank",
    "cls_score",
    "compute_report",
    "dense_lookup",
    "dense_matrix",
    "evaluate_case",
    "f1_max",
    "fuse",
    "generate",
    "hyperedge_reconstruct",
    "max_lookup",
    "max_matrix",
    "normalize_rows",
    "pixel_metrics",
    "pool_map",
    "pro",
    "read_bank_file",
    "read_feature_file",
    "read_feature_header",
    "run_ablation",
    "sparsemax",
    "sparsemax_matrix",
    "sparsemax_oracle",
    "topn_lookup",
    "topn_matrix",
    "upsample_map",
    "weights_matrix",
    "write_bank_file",
    "write_feature_file",
]
