"""MVTec-style dataset walking, support sampling, and manifest writing.

Expected layout under the dataset root:

    <category>/train/good/*.png
    <category>/test/good/*.png
    <category>/test/<defect>/*.png
    <category>/ground_truth/<defect>/<stem>_mask.png

Every anomalous test image must have a mask when the category ships a
ground_truth directory; categories without one get mask-less entries.
"""

from __future__ import annotations

import csv
import hashlib
import os
import random
from dataclasses import dataclass
from pathlib import Path

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class DatasetError(ValueError):
    """Raised when the on-disk layout breaks the MVTec-style contract."""


@dataclass(frozen=True)
class ImageRecord:
    """One dataset image: its path, binary label, optional mask, defect name."""

    path: Path
    label: int
    mask: Path | None
    defect: str


@dataclass
class DatasetIndex:
    """categories -> {"train": [...], "test": [...]} of ImageRecords."""

    root: Path
    categories: dict[str, dict[str, list[ImageRecord]]]

    def category_names(self) -> list[str]:
        return sorted(self.categories)


def _images_in(directory: Path) -> list[Path]:
    return sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def _mask_for(category_dir: Path, defect: str, image: Path) -> Path | None:
    ground_truth = category_dir / "ground_truth"
    if not ground_truth.is_dir():
        return None
    # MVTec names masks <stem>_mask.png; accept a same-stem file as fallback.
    for candidate in (
        ground_truth / defect / f"{image.stem}_mask.png",
        ground_truth / defect / f"{image.stem}.png",
    ):
        if candidate.is_file():
            return candidate
    raise DatasetError(f"no ground-truth mask for anomalous image {image}")


def _walk_category(category_dir: Path) -> dict[str, list[ImageRecord]]:
    train_good = category_dir / "train" / "good"
    test_dir = category_dir / "test"
    if not train_good.is_dir():
        raise DatasetError(f"missing {train_good}")
    if not test_dir.is_dir():
        raise DatasetError(f"missing {test_dir}")
    train = [ImageRecord(p, 0, None, "good") for p in _images_in(train_good)]
    if not train:
        raise DatasetError(f"no images under {train_good}")
    test: list[ImageRecord] = []
    for defect_dir in sorted(p for p in test_dir.iterdir() if p.is_dir()):
        defect = defect_dir.name
        for image in _images_in(defect_dir):
            if defect == "good":
                test.append(ImageRecord(image, 0, None, defect))
            else:
                test.append(ImageRecord(image, 1, _mask_for(category_dir, defect, image), defect))
    if not test:
        raise DatasetError(f"no test images under {test_dir}")
    return {"train": train, "test": test}


def index_dataset(root: str | os.PathLike, categories: list[str] | None = None) -> DatasetIndex:
    """Walk an MVTec-style tree; categories defaults to every directory with a train/ split."""
    root_path = Path(root)
    if not root_path.is_dir():
        raise DatasetError(f"dataset root {root_path} is not a directory")
    if categories is None:
        categories = sorted(
            p.name for p in root_path.iterdir() if (p / "train").is_dir()
        )
        if not categories:
            raise DatasetError(f"no MVTec-style categories under {root_path}")
    found: dict[str, dict[str, list[ImageRecord]]] = {}
    for name in categories:
        found[name] = _walk_category(root_path / name)
    return DatasetIndex(root_path, found)


def sample_supports(train: list[ImageRecord], k: int, seed: int, category: str) -> list[ImageRecord]:
    """Pick k support images, reproducibly for a given (seed, k, category).

    The RNG is keyed on all three values so different shot counts draw
    independent subsets instead of nested prefixes.
    """
    if not 1 <= k <= len(train):
        raise DatasetError(
            f"cannot draw {k} supports from {len(train)} train images in {category!r}"
        )
    digest = hashlib.sha256(f"{seed}/{k}/{category}".encode()).digest()
    rng = random.Random(int.from_bytes(digest[:8], "little"))
    ordered = sorted(train, key=lambda record: str(record.path))
    return [ordered[i] for i in sorted(rng.sample(range(len(ordered)), k))]


def write_manifest(rows: list[tuple[str, object, object, str]], path: str | os.PathLike) -> None:
    """Write (path,label,mask,category) rows as the engine's manifest CSV."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["path", "label", "mask", "category"])
        for file_path, label, mask, category in rows:
            writer.writerow([
                file_path,
                "" if label is None else int(label),
                "" if mask is None else mask,
                category,
            ])


def relative_to_manifest(target: Path, manifest_path: Path) -> str:
    """Path string for a manifest cell, relative to the manifest's directory."""
    return os.path.relpath(target, start=manifest_path.parent)
