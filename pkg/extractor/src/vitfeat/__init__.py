"""ViT feature extraction for MVTec-style datasets.

Walks a dataset tree, runs a frozen vision transformer over every image,
and writes one binary feature file per image (multi-layer patch tokens
plus CLS) together with support/query manifest CSVs, in exactly the
formats the scoring engine consumes.
"""

from .backbone import (
    BACKBONE_NAMES,
    BackboneError,
    BackboneSpec,
    SPECS,
    TokenBackbone,
    load_backbone,
)
from .dataset import (
    DatasetError,
    DatasetIndex,
    ImageRecord,
    index_dataset,
    sample_supports,
    write_manifest,
)
from .extract import (
    DEFAULT_LAYERS,
    CategoryResult,
    ExtractConfig,
    extract_images,
    run_extraction,
    verify_file,
)
from .format import FeatureFormatError, ImageFeatures, load, save

__version__ = "0.1.0"

__all__ = [
    "BACKBONE_NAMES",
    "BackboneError",
    "BackboneSpec",
    "CategoryResult",
    "DEFAULT_LAYERS",
    "DatasetError",
    "DatasetIndex",
    "ExtractConfig",
    "FeatureFormatError",
    "ImageFeatures",
    "ImageRecord",
    "SPECS",
    "TokenBackbone",
    "extract_images",
    "index_dataset",
    "load",
    "load_backbone",
    "run_extraction",
    "sample_supports",
    "save",
    "verify_file",
    "write_manifest",
]
