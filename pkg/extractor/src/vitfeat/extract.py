"""Dataset-to-feature-files extraction pipeline."""

from __future__ import annotations

import os
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .backbone import TokenBackbone, load_backbone
from .dataset import (
    DatasetError,
    ImageRecord,
    index_dataset,
    relative_to_manifest,
    sample_supports,
    write_manifest,
)
from .format import ImageFeatures, save

DEFAULT_LAYERS = (1, 7, 9, 10)


@dataclass
class ExtractConfig:
    """Everything one extraction run depends on."""

    dataset_root: Path
    output_root: Path
    backbone_id: str = "vit_b_16"
    layer_indices: tuple[int, ...] = DEFAULT_LAYERS
    resolution: int = 448
    shots: tuple[int, ...] = (1, 2, 4)
    seed: int = 0
    batch_size: int = 8
    device: str = "cpu"
    pretrained: bool = False
    categories: list[str] | None = None


@dataclass
class CategoryResult:
    """Feature files and manifests written for one category."""

    feature_files: dict[Path, ImageRecord] = field(default_factory=dict)
    support_manifests: dict[int, Path] = field(default_factory=dict)
    query_manifest: Path | None = None


def _load_pixels(path: Path, backbone: TokenBackbone) -> torch.Tensor:
    try:
        with Image.open(path) as image:
            return backbone.preprocess(image)
    except OSError as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc


def extract_images(backbone: TokenBackbone, items: Sequence[tuple[Path, str, Path]],
                   layer_indices: Sequence[int], batch_size: int = 8,
                   log: Callable[[str], None] | None = None) -> list[Path]:
    """Extract (image path, image id, output path) triples to feature files."""
    backbone.check_layers(layer_indices)
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    written: list[Path] = []
    for start in range(0, len(items), batch_size):
        chunk = items[start:start + batch_size]
        batch = torch.stack([_load_pixels(path, backbone) for path, _, _ in chunk])
        stacks = backbone.tokens(batch, layer_indices)
        for row, (_, image_id, out_path) in enumerate(chunk):
            patches = [np.asarray(stack[row, 1:, :], dtype=np.float32) for stack in stacks]
            cls = [np.asarray(stack[row, 0, :], dtype=np.float32) for stack in stacks]
            features = ImageFeatures(
                image_id=image_id,
                grid=backbone.grid,
                source_resolution=(backbone.resolution, backbone.resolution),
                layer_indices=list(layer_indices),
                patches=patches,
                cls=cls,
            )
            out_path.parent.mkdir(parents=True, exist_ok=True)
            save(features, out_path)
            written.append(out_path)
        if log is not None:
            log(f"  {min(start + batch_size, len(items))}/{len(items)} images")
    return written


def _feature_path(out_dir: Path, category: str, split: str, record: ImageRecord) -> Path:
    return out_dir / category / "features" / split / record.defect / f"{record.path.stem}.feat"


def _image_id(category: str, split: str, record: ImageRecord) -> str:
    return f"{category}/{split}/{record.defect}/{record.path.stem}"


def run_extraction(cfg: ExtractConfig,
                   log: Callable[[str], None] | None = None) -> dict[str, CategoryResult]:
    """Extract every image of every category and write support/query manifests."""
    backbone = load_backbone(cfg.backbone_id, cfg.resolution, cfg.seed, cfg.device,
                             cfg.pretrained)
    backbone.check_layers(cfg.layer_indices)
    index = index_dataset(cfg.dataset_root, cfg.categories)
    out_dir = Path(cfg.output_root)
    results: dict[str, CategoryResult] = {}
    for category in index.category_names():
        splits = index.categories[category]
        result = CategoryResult()
        items = []
        for split in ("train", "test"):
            for record in splits[split]:
                target = _feature_path(out_dir, category, split, record)
                items.append((record.path, _image_id(category, split, record), target))
                result.feature_files[target] = record
        if log is not None:
            log(f"{category}: extracting {len(items)} images")
        extract_images(backbone, items, cfg.layer_indices, cfg.batch_size, log)

        queries_path = out_dir / category / "queries.csv"
        query_rows = []
        for record in splits["test"]:
            feat = _feature_path(out_dir, category, "test", record)
            mask = (
                relative_to_manifest(record.mask, queries_path)
                if record.mask is not None else None
            )
            query_rows.append(
                (relative_to_manifest(feat, queries_path), record.label, mask, category)
            )
        write_manifest(query_rows, queries_path)
        result.query_manifest = queries_path

        for k in cfg.shots:
            supports = sample_supports(splits["train"], k, cfg.seed, category)
            support_path = out_dir / category / f"support_k{k}.csv"
            support_rows = [
                (
                    relative_to_manifest(_feature_path(out_dir, category, "train", record),
                                         support_path),
                    0,
                    None,
                    category,
                )
                for record in supports
            ]
            write_manifest(support_rows, support_path)
            result.support_manifests[k] = support_path
        results[category] = result
    return results


def verify_file(path: str | os.PathLike, expect_dim: int | None = None,
                expect_grid: tuple[int, int] | None = None) -> list[str]:
    """Re-parse a feature file and report per-layer token norms.

    Returns printable report lines; raises on any format violation or on a
    mismatch against the expected backbone dimensions.
    """
    from .format import load

    features = load(path)
    if expect_dim is not None and features.dim != expect_dim:
        raise DatasetError(
            f"{path}: dim {features.dim} does not match backbone dim {expect_dim}"
        )
    if expect_grid is not None and features.grid != tuple(expect_grid):
        raise DatasetError(
            f"{path}: grid {features.grid} does not match expected {tuple(expect_grid)}"
        )
    grid_h, grid_w = features.grid
    lines = [
        f"{path}: id {features.image_id!r}, grid {grid_h}x{grid_w}, dim {features.dim}, "
        f"source {features.source_resolution[0]}x{features.source_resolution[1]}"
    ]
    for index, patches, cls in zip(features.layer_indices, features.patches, features.cls):
        patch_norms = np.linalg.norm(patches.astype(np.float64), axis=1)
        cls_norm = float(np.linalg.norm(cls.astype(np.float64)))
        lines.append(
            f"  layer {index}: patch norm mean {patch_norms.mean():.4f} "
            f"min {patch_norms.min():.4f} max {patch_norms.max():.4f}, "
            f"cls norm {cls_norm:.4f}"
        )
    return lines
