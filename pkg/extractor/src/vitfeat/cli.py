"""Command-line entry points: extract a dataset, verify written files."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backbone import BACKBONE_NAMES, SPECS, BackboneError
from .dataset import DatasetError
from .extract import DEFAULT_LAYERS, ExtractConfig, run_extraction, verify_file
from .format import FeatureFormatError


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vitfeat",
        description="Extract ViT patch/CLS tokens from MVTec-style image datasets "
        "into engine-format feature files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    extract = sub.add_parser("extract", help="walk a dataset and write feature files")
    extract.add_argument("--dataset-root", required=True, type=Path)
    extract.add_argument("--out", required=True, type=Path, help="output root directory")
    extract.add_argument("--backbone", default="vit_b_16", choices=BACKBONE_NAMES)
    extract.add_argument("--layers", type=_int_list, default=DEFAULT_LAYERS,
                         help="1-based transformer block indices (default 1,7,9,10)")
    extract.add_argument("--resolution", type=int, default=448)
    extract.add_argument("--shots", type=_int_list, default=(1, 2, 4),
                         help="support-set sizes to emit manifests for")
    extract.add_argument("--seed", type=int, default=0)
    extract.add_argument("--batch-size", type=int, default=8)
    extract.add_argument("--device", default="cpu")
    extract.add_argument("--pretrained", action="store_true",
                         help="load published backbone weights instead of seeded random ones")
    extract.add_argument("--categories", default=None,
                         help="comma-separated subset (default: every category found)")

    verify = sub.add_parser("verify", help="re-parse feature files and print token norms")
    verify.add_argument("files", nargs="+", type=Path)
    verify.add_argument("--backbone", default=None, choices=tuple(SPECS),
                        help="check dim/grid against this backbone configuration")
    verify.add_argument("--resolution", type=int, default=448,
                        help="resolution the files were extracted at (with --backbone)")
    return parser


def cmd_extract(args: argparse.Namespace) -> int:
    cfg = ExtractConfig(
        dataset_root=args.dataset_root,
        output_root=args.out,
        backbone_id=args.backbone,
        layer_indices=args.layers,
        resolution=args.resolution,
        shots=args.shots,
        seed=args.seed,
        batch_size=args.batch_size,
        device=args.device,
        pretrained=args.pretrained,
        categories=args.categories.split(",") if args.categories else None,
    )
    results = run_extraction(cfg, log=print)
    for category in sorted(results):
        result = results[category]
        shots = ",".join(str(k) for k in sorted(result.support_manifests))
        print(f"{category}: {len(result.feature_files)} feature files, "
              f"queries.csv, support manifests for k={shots}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    expect_dim = expect_grid = None
    if args.backbone is not None:
        spec = SPECS[args.backbone]
        if args.resolution % spec.patch_size != 0:
            raise BackboneError(
                f"resolution {args.resolution} is not a multiple of patch size {spec.patch_size}"
            )
        side = args.resolution // spec.patch_size
        expect_dim, expect_grid = spec.hidden_dim, (side, side)
    violations = 0
    for path in args.files:
        try:
            for line in verify_file(path, expect_dim, expect_grid):
                print(line)
        except (FeatureFormatError, DatasetError, OSError) as exc:
            violations += 1
            print(f"{path}: VIOLATION: {exc}", file=sys.stderr)
    print(f"{len(args.files)} files checked, {violations} violations")
    return 1 if violations else 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "extract":
            return cmd_extract(args)
        return cmd_verify(args)
    except (BackboneError, DatasetError, FeatureFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
