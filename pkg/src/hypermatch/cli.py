"""Command-line interface: bank building, scoring, evaluation, synthesis.

Subcommands
-----------
bank    build a memory bank file from a support manifest
score   score a query manifest against a bank, writing CSV/JSONL records
eval    aggregate score files (and optional maps/masks) into a report
synth   generate a synthetic case on disk
ablate  sweep one knob on synthetic cases and emit a results table

Manifests are line-oriented CSV with columns ``path,label,mask,category``
(header optional; relative paths resolve against the manifest location;
label is 0, 1, or empty for unknown).  All failures exit nonzero after a
single ``category: message`` line on stderr: usage errors exit 2, data
and format errors exit 3, undefined metrics exit 4.  For a fixed set of
inputs and flags every output byte is reproducible, regardless of
``--threads``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import (
    DimensionError,
    FormatError,
    MetricUndefinedError,
    ValidationError,
)
from .features import FeatureSet, read_feature_file, read_feature_header, write_feature_file
from .lookup import LookupStrategy
from .matching import (
    MemoryBank,
    NORMALIZATIONS,
    anomaly_map,
    build_memory_bank,
    read_bank_file,
    upsample_map,
    write_bank_file,
)
from .metrics import (
    EvalReport,
    SegmentationCase,
    average_precision,
    auroc,
    f1_max,
    pixel_metrics,
    pro,
)
from .scoring import PoolingSpec, ScoreRecord, cls_score, fuse, pool_map
from .synth import ABLATION_AXES, SynthSpec, generate, run_ablation

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_METRIC = 4

THREADS_ENV = "HYPERMATCH_THREADS"

SCORE_COLUMNS = ("image_id", "label", "s_map", "s_cls", "s_image")


@dataclass
class ManifestEntry:
    """One dataset row: a feature file with optional label, mask, category."""

    path: str
    label: int | None
    mask: str | None
    category: str


@dataclass
class RunConfig:
    """Scoring knobs shared by every query of one ``score`` invocation."""

    strategy: LookupStrategy
    pooling: PoolingSpec
    fusion_weight: float
    threads: int
    upsample: tuple[int, int] | None
    smooth_sigma: float
    save_maps: bool
    heatmaps: bool


def read_manifest(path: str) -> list[ManifestEntry]:
    """Parse a manifest; paths come back resolved against its directory."""
    base = os.path.dirname(os.path.abspath(path))
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot open manifest {path}: {exc}") from exc
    with handle:
        for row_number, row in enumerate(csv.reader(handle), start=1):
            if not row or not any(cell.strip() for cell in row):
                continue
            if row_number == 1 and row[0].strip().lower() == "path":
                continue
            cells = [cell.strip() for cell in row] + [""] * (4 - len(row))
            if len(cells) > 4:
                raise ValidationError(
                    f"{path}:{row_number}: expected at most 4 columns, got {len(row)}"
                )
            raw_path, raw_label, raw_mask, category = cells[:4]
            if not raw_path:
                raise ValidationError(f"{path}:{row_number}: missing feature path")
            if raw_label in ("", "unknown"):
                label = None
            elif raw_label in ("0", "1"):
                label = int(raw_label)
            else:
                raise ValidationError(
                    f"{path}:{row_number}: label must be 0, 1, or empty, got {raw_label!r}"
                )
            resolved = os.path.normpath(os.path.join(base, raw_path))
            if resolved in seen:
                raise ValidationError(f"{path}:{row_number}: duplicate entry {raw_path}")
            seen.add(resolved)
            mask = os.path.normpath(os.path.join(base, raw_mask)) if raw_mask else None
            entries.append(ManifestEntry(resolved, label, mask, category))
    return entries


def write_manifest(path: str, rows: list[tuple[str, str, str, str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("path", "label", "mask", "category"))
        writer.writerows(rows)


def _read_features_at(path: str) -> FeatureSet:
    try:
        return read_feature_file(path)
    except FileNotFoundError as exc:
        raise ValidationError(f"{path}: no such feature file") from exc
    except (FormatError, ValidationError) as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def _format_float(value: float) -> str:
    return repr(float(value))


def _sanitize_id(image_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", image_id) or "image"


# ---------------------------------------------------------------- bank


def cmd_bank(args: argparse.Namespace) -> int:
    entries = read_manifest(args.supports)
    if not entries:
        raise ValidationError(f"support manifest {args.supports} is empty")
    anomalous = [entry.path for entry in entries if entry.label == 1]
    if anomalous:
        listing = ", ".join(anomalous)
        if not args.force:
            raise ValidationError(
                f"support manifest lists anomalous-labeled images: {listing} "
                "(pass --force to use them as supports anyway)"
            )
        print(f"warning: using anomalous-labeled supports: {listing}", file=sys.stderr)
    supports = [_read_features_at(entry.path) for entry in entries]
    bank = build_memory_bank(supports, args.normalization)
    write_bank_file(bank, args.out)
    grid_h, grid_w = bank.grid
    print(
        f"bank: shots={bank.shot_count} layers={bank.layer_indices} "
        f"grid={grid_h}x{grid_w} dim={bank.dim} normalization={bank.normalization} "
        f"-> {args.out}"
    )
    return EXIT_OK


# ---------------------------------------------------------------- score


def _resolve_threads(requested: int | None) -> int:
    if requested is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        if env:
            try:
                requested = int(env)
            except ValueError as exc:
                raise ValidationError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
            if requested < 0:
                raise ValidationError(f"{THREADS_ENV} must be non-negative")
    if requested is None:
        requested = 1
    if requested == 0:
        requested = os.cpu_count() or 1
    return requested


def _score_one(
    entry: ManifestEntry, bank: MemoryBank, config: RunConfig
) -> tuple[ScoreRecord, np.ndarray]:
    features = _read_features_at(entry.path)
    try:
        amap = anomaly_map(features, bank, config.strategy)
        s_map = pool_map(amap, config.pooling)
        s_cls = cls_score(features, bank)
    except (ValidationError, DimensionError) as exc:
        raise type(exc)(f"{entry.path}: {exc}") from exc
    record = ScoreRecord(
        features.image_id,
        s_map,
        s_cls,
        fuse(s_map, s_cls, config.fusion_weight),
        config.fusion_weight,
    )
    return record, amap.grid


def _write_heatmap(path: str, grid: np.ndarray) -> None:
    low = float(grid.min())
    high = float(grid.max())
    if high > low:
        scaled = (grid - low) / (high - low)
    else:
        scaled = np.zeros_like(grid)
    Image.fromarray(np.round(scaled * 255.0).astype(np.uint8), mode="L").save(path)


def cmd_score(args: argparse.Namespace) -> int:
    bank = read_bank_file(args.bank)
    entries = read_manifest(args.queries)
    config = RunConfig(
        strategy=args.lookup,
        pooling=args.pooling,
        fusion_weight=args.fusion_weight,
        threads=_resolve_threads(args.threads),
        upsample=args.upsample,
        smooth_sigma=args.smooth_sigma,
        save_maps=args.save_maps,
        heatmaps=args.heatmaps,
    )
    os.makedirs(args.out, exist_ok=True)
    if config.threads > 1 and len(entries) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as executor:
            results = list(executor.map(lambda e: _score_one(e, bank, config), entries))
    else:
        results = [_score_one(entry, bank, config) for entry in entries]

    used_names: dict[str, str] = {}
    if config.save_maps:
        os.makedirs(os.path.join(args.out, "maps"), exist_ok=True)
    if config.heatmaps:
        os.makedirs(os.path.join(args.out, "heatmaps"), exist_ok=True)
    csv_path = os.path.join(args.out, "scores.csv")
    jsonl_path = os.path.join(args.out, "scores.jsonl")
    with open(csv_path, "w", newline="", encoding="utf-8") as csv_handle, open(
        jsonl_path, "w", encoding="utf-8"
    ) as jsonl_handle:
        writer = csv.writer(csv_handle, lineterminator="\n")
        writer.writerow(SCORE_COLUMNS)
        for entry, (record, grid) in zip(entries, results):
            label_text = "" if entry.label is None else str(entry.label)
            writer.writerow(
                (
                    record.image_id,
                    label_text,
                    _format_float(record.s_map),
                    _format_float(record.s_cls),
                    _format_float(record.s_image),
                )
            )
            jsonl_handle.write(
                json.dumps(
                    {
                        "image_id": record.image_id,
                        "label": entry.label,
                        "s_map": float(record.s_map),
                        "s_cls": float(record.s_cls),
                        "s_image": float(record.s_image),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
            name = _sanitize_id(record.image_id)
            if used_names.setdefault(name, record.image_id) != record.image_id:
                raise ValidationError(
                    f"image ids {used_names[name]!r} and {record.image_id!r} collide "
                    f"on output name {name!r}"
                )
            if config.save_maps:
                np.save(os.path.join(args.out, "maps", f"{name}.npy"), grid)
            if config.heatmaps:
                rendered = grid
                if config.upsample is not None:
                    rendered = upsample_map(
                        grid, config.upsample[0], config.upsample[1], config.smooth_sigma
                    )
                _write_heatmap(os.path.join(args.out, "heatmaps", f"{name}.png"), rendered)
    print(f"scored {len(entries)} queries -> {csv_path}")
    return EXIT_OK


# ---------------------------------------------------------------- eval


def _load_mask(path: str) -> np.ndarray:
    if path.endswith(".npy"):
        mask = np.load(path)
    else:
        with Image.open(path) as image:
            mask = np.asarray(image)
    if mask.ndim == 3:
        mask = mask.max(axis=2)
    if mask.ndim != 2:
        raise DimensionError(f"{path}: mask must be 2-D")
    return (mask > 0).astype(np.uint8)


def _downscale_mask(mask: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Block-max reduction: a target cell is anomalous if any source pixel is."""
    target_h, target_w = shape
    source_h, source_w = mask.shape
    if target_h > source_h or target_w > source_w:
        raise DimensionError(f"cannot downscale mask {mask.shape} to larger {shape}")
    row_starts = (np.arange(target_h) * source_h) // target_h
    col_starts = (np.arange(target_w) * source_w) // target_w
    reduced = np.maximum.reduceat(mask, row_starts, axis=0)
    return np.maximum.reduceat(reduced, col_starts, axis=1)


def _read_score_rows(path: str) -> list[dict]:
    rows = []
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot open scores file {path}: {exc}") from exc
    with handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != list(
            SCORE_COLUMNS
        ):
            raise FormatError(
                f"{path}: expected columns {','.join(SCORE_COLUMNS)}, "
                f"got {reader.fieldnames}"
            )
        for row in reader:
            try:
                rows.append(
                    {
                        "image_id": row["image_id"],
                        "label": int(row["label"]) if row["label"] != "" else None,
                        "s_map": float(row["s_map"]),
                        "s_cls": float(row["s_cls"]),
                        "s_image": float(row["s_image"]),
                    }
                )
            except (TypeError, KeyError, ValueError) as exc:
                raise FormatError(f"{path}: malformed row {row!r}: {exc}") from exc
    return rows


def _image_metrics_or_none(scores: list[float], labels: list[int]) -> dict:
    values = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(labels, dtype=np.int64)
    if values.size < 2 or len(set(labels)) < 2:
        return {"i_auroc": None, "i_f1": None, "i_ap": None}
    return {
        "i_auroc": auroc(values, truth),
        "i_f1": f1_max(values, truth),
        "i_ap": average_precision(values, truth),
    }


def _mean_metric_dicts(dicts: list[dict]) -> dict:
    keys: list[str] = []
    for entry in dicts:
        for key in entry:
            if key not in keys:
                keys.append(key)
    merged = {}
    for key in keys:
        values = [entry.get(key) for entry in dicts]
        merged[key] = (
            None if any(v is None for v in values) else float(np.mean([float(v) for v in values]))
        )
    return merged


def cmd_eval(args: argparse.Namespace) -> int:
    manifest = read_manifest(args.manifest) if args.manifest else None
    by_image: dict[str, ManifestEntry] = {}
    if manifest is not None:
        for entry in manifest:
            try:
                header = read_feature_header(entry.path)
            except FileNotFoundError as exc:
                raise ValidationError(f"{entry.path}: no such feature file") from exc
            if header.image_id in by_image:
                raise ValidationError(
                    f"manifest {args.manifest} repeats image id {header.image_id!r}"
                )
            by_image[header.image_id] = entry

    maps_dir = args.maps
    if maps_dir is None and manifest is not None:
        candidate = os.path.join(os.path.dirname(os.path.abspath(args.scores[0])), "maps")
        if os.path.isdir(candidate):
            maps_dir = candidate
    pixel_eval = maps_dir is not None and manifest is not None

    per_seed = []
    for scores_path in args.scores:
        rows = _read_score_rows(scores_path)
        if not rows:
            raise MetricUndefinedError(f"{scores_path}: no scored images to evaluate")
        labels = []
        categories = []
        for row in rows:
            label = row["label"]
            entry = by_image.get(row["image_id"]) if manifest is not None else None
            if label is None and entry is not None:
                label = entry.label
            if label is None:
                raise ValidationError(
                    f"{scores_path}: image {row['image_id']!r} has no label"
                )
            labels.append(label)
            categories.append(entry.category if entry is not None and entry.category else "all")
        scores = [row["s_image"] for row in rows]
        if len(set(labels)) < 2:
            raise MetricUndefinedError(
                f"{scores_path}: both classes are required for image metrics"
            )
        overall = {
            "i_auroc": auroc(scores, labels),
            "i_f1": f1_max(scores, labels),
            "i_ap": average_precision(scores, labels),
        }
        segmentation: list[SegmentationCase] = []
        per_category_cases: dict[str, list[SegmentationCase]] = {}
        if pixel_eval:
            for row, label, category in zip(rows, labels, categories):
                entry = by_image.get(row["image_id"])
                if entry is None:
                    raise ValidationError(
                        f"{scores_path}: image {row['image_id']!r} is not in the manifest"
                    )
                map_path = os.path.join(maps_dir, f"{_sanitize_id(row['image_id'])}.npy")
                if not os.path.exists(map_path):
                    raise ValidationError(f"missing score map {map_path}")
                grid = np.load(map_path)
                if entry.mask is None:
                    if label == 1:
                        raise ValidationError(
                            f"manifest entry {entry.path} is anomalous but has no mask"
                        )
                    mask = np.zeros(grid.shape, dtype=np.uint8)
                else:
                    mask = _load_mask(entry.mask)
                if mask.shape != grid.shape:
                    if args.pixel_res == "map":
                        grid = upsample_map(grid, mask.shape[0], mask.shape[1])
                    else:
                        mask = _downscale_mask(mask, grid.shape)
                case = SegmentationCase(grid, mask)
                segmentation.append(case)
                per_category_cases.setdefault(category, []).append(case)
            p_auroc, p_f1, p_ap = pixel_metrics(segmentation)
            overall.update(
                p_auroc=p_auroc,
                p_f1=p_f1,
                p_ap=p_ap,
                p_pro=pro(segmentation, fpr_limit=args.fpr_limit),
            )
        per_category: dict[str, dict] = {}
        for category in sorted(set(categories)):
            picked = [i for i, c in enumerate(categories) if c == category]
            block = _image_metrics_or_none(
                [scores[i] for i in picked], [labels[i] for i in picked]
            )
            if pixel_eval:
                cases = per_category_cases.get(category, [])
                try:
                    p_auroc, p_f1, p_ap = pixel_metrics(cases)
                    block.update(
                        p_auroc=p_auroc,
                        p_f1=p_f1,
                        p_ap=p_ap,
                        p_pro=pro(cases, fpr_limit=args.fpr_limit),
                    )
                except MetricUndefinedError:
                    block.update(p_auroc=None, p_f1=None, p_ap=None, p_pro=None)
            per_category[category] = block
        per_seed.append(
            {"scores": scores_path, "overall": overall, "per_category": per_category}
        )

    overall_mean = _mean_metric_dicts([seed["overall"] for seed in per_seed])
    category_names = sorted({c for seed in per_seed for c in seed["per_category"]})
    per_category_mean = {
        name: _mean_metric_dicts(
            [seed["per_category"][name] for seed in per_seed if name in seed["per_category"]]
        )
        for name in category_names
    }
    macro_mean = _mean_metric_dicts(list(per_category_mean.values()))
    report = {
        "per_seed": per_seed,
        "overall_mean": overall_mean,
        "per_category_mean": per_category_mean,
        "category_macro_mean": macro_mean,
    }
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as handle:
        json.dump(report, handle, indent=2, sort_keys=True)
        handle.write("\n")

    metric_names = ["i_auroc", "i_f1", "i_ap", "p_auroc", "p_f1", "p_ap", "p_pro"]
    summary_path = os.path.splitext(args.out)[0] + ".csv"
    with open(summary_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["category"] + metric_names)
        for name in category_names:
            writer.writerow(
                [name]
                + [
                    "" if per_category_mean[name].get(metric) is None
                    else _format_float(per_category_mean[name][metric])
                    for metric in metric_names
                ]
            )
        writer.writerow(
            ["mean"]
            + [
                "" if macro_mean.get(metric) is None else _format_float(macro_mean[metric])
                for metric in metric_names
            ]
        )
    shown = " ".join(
        f"{name}={overall_mean[name]:.4f}"
        for name in metric_names
        if overall_mean.get(name) is not None
    )
    print(f"eval: {shown} -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- synth


def _spec_from_args(args: argparse.Namespace, shots: int | None = None) -> SynthSpec:
    return SynthSpec(
        seed=args.seed,
        shots=args.shots if shots is None else shots,
        grid=args.grid,
        dim=args.dim,
        layer_count=args.layers,
        n_clusters=args.clusters,
        query_count=args.queries,
        anomaly_rate=args.anomaly_rate,
        anomaly_cells=args.anomaly_cells,
        anomaly_shift=args.anomaly_shift,
        distractor_count=args.distractors,
        noise_sigma=args.noise_sigma,
    )


def cmd_synth(args: argparse.Namespace) -> int:
    spec = _spec_from_args(args)
    case = generate(spec)
    for subdir in ("supports", "queries", "masks"):
        os.makedirs(os.path.join(args.out, subdir), exist_ok=True)
    support_rows = []
    for features in case.supports:
        relative = os.path.join("supports", f"{features.image_id}.feat")
        write_feature_file(features, os.path.join(args.out, relative))
        support_rows.append((relative, "0", "", "synth"))
    query_rows = []
    for features, label, mask in zip(case.queries, case.labels, case.masks):
        relative = os.path.join("queries", f"{features.image_id}.feat")
        write_feature_file(features, os.path.join(args.out, relative))
        mask_relative = ""
        if label == 1:
            mask_relative = os.path.join("masks", f"{features.image_id}.npy")
            np.save(os.path.join(args.out, mask_relative), mask)
        query_rows.append((relative, str(int(label)), mask_relative, "synth"))
    write_manifest(os.path.join(args.out, "support_manifest.csv"), support_rows)
    write_manifest(os.path.join(args.out, "query_manifest.csv"), query_rows)
    with open(os.path.join(args.out, "case.json"), "w", encoding="utf-8") as handle:
        payload = dataclasses.asdict(spec)
        payload["labels"] = [int(v) for v in case.labels]
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")
    print(
        f"synth: {len(case.supports)} supports, {len(case.queries)} queries "
        f"({int(case.labels.sum())} anomalous) -> {args.out}"
    )
    return EXIT_OK


# ---------------------------------------------------------------- ablate

_AXIS_METRICS = {
    "lookup": ("i_auroc", "p_auroc"),
    "lambda": ("i_auroc", "i_f1", "i_ap"),
    "pooling": ("i_auroc", "i_f1", "i_ap"),
}


def _render_table(
    axis: str, shots: list[int], rows: dict[str, dict[int, EvalReport]]
) -> tuple[str, list[list[str]]]:
    metric_names = _AXIS_METRICS[axis]
    header = [axis] + [
        f"{shot}-shot {metric}" for shot in shots for metric in metric_names
    ]
    table = [header]
    for value, by_shot in rows.items():
        row = [value]
        for shot in shots:
            report = by_shot[shot]
            for metric in metric_names:
                number = getattr(report, metric)
                row.append("" if number is None else f"{number:.4f}")
        table.append(row)
    widths = [max(len(line[i]) for line in table) for i in range(len(header))]
    lines = []
    for index, line in enumerate(table):
        lines.append("| " + " | ".join(cell.ljust(widths[i]) for i, cell in enumerate(line)) + " |")
        if index == 0:
            lines.append("|" + "|".join("-" * (widths[i] + 2) for i in range(len(header))) + "|")
    return "\n".join(lines) + "\n", table


def cmd_ablate(args: argparse.Namespace) -> int:
    values = [v for v in (args.values.split(",") if args.values else []) if v.strip()]
    rows: dict[str, dict[int, EvalReport]] = {}
    reports_payload: dict[str, dict[str, dict]] = {}
    for shot in args.shots:
        case = generate(_spec_from_args(args, shots=shot))
        for label, report in run_ablation(case, args.axis, values or None):
            rows.setdefault(label, {})[shot] = report
            reports_payload.setdefault(label, {})[str(shot)] = report.to_json_dict()
    markdown, table = _render_table(args.axis, args.shots, rows)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "table.md"), "w", encoding="utf-8") as handle:
        handle.write(markdown)
    with open(os.path.join(args.out, "table.csv"), "w", newline="", encoding="utf-8") as handle:
        csv.writer(handle, lineterminator="\n").writerows(table)
    with open(os.path.join(args.out, "reports.json"), "w", encoding="utf-8") as handle:
        json.dump(reports_payload, handle, indent=2, sort_keys=True)
        handle.write("\n")
    sys.stdout.write(markdown)
    print(f"ablate: axis={args.axis} shots={args.shots} -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _type_lookup(text: str) -> LookupStrategy:
    try:
        return LookupStrategy.parse(text)
    except ValidationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _type_pooling(text: str) -> PoolingSpec:
    try:
        return PoolingSpec.parse(text)
    except ValidationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _type_unit(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in [0, 1], got {text}")
    return value


def _type_nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def _type_pos_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _type_size(text: str) -> tuple[int, int]:
    match = re.fullmatch(r"(\d+)x(\d+)", text.strip().lower())
    if not match:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    return int(match.group(1)), int(match.group(2))


def _type_int_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _add_spec_args(parser: argparse.ArgumentParser, with_shots: bool) -> None:
    parser.add_argument("--seed", type=int, default=0)
    if with_shots:
        parser.add_argument("--shots", type=_type_pos_int, default=2)
    parser.add_argument("--grid", type=_type_size, default=(8, 8))
    parser.add_argument("--dim", type=_type_pos_int, default=32)
    parser.add_argument("--layers", type=_type_pos_int, default=2)
    parser.add_argument("--clusters", type=_type_pos_int, default=4)
    parser.add_argument("--queries", type=_type_pos_int, default=20)
    parser.add_argument("--anomaly-rate", type=_type_unit, default=0.5)
    parser.add_argument("--anomaly-cells", type=_type_pos_int, default=4)
    parser.add_argument("--anomaly-shift", type=float, default=0.8)
    parser.add_argument("--distractors", type=_type_nonneg_int, default=0)
    parser.add_argument("--noise-sigma", type=float, default=0.05)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hypermatch",
        description="Few-shot anomaly scoring on pre-extracted multi-layer features.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    bank = commands.add_parser("bank", help="build a memory bank from a support manifest")
    bank.add_argument("--supports", required=True, help="support manifest CSV")
    bank.add_argument("--out", required=True, help="bank file to write")
    bank.add_argument("--normalization", choices=NORMALIZATIONS, default="l2")
    bank.add_argument("--force", action="store_true", help="allow anomalous supports")
    bank.set_defaults(handler=cmd_bank)

    score = commands.add_parser("score", help="score queries against a bank")
    score.add_argument("--bank", required=True)
    score.add_argument("--queries", required=True, help="query manifest CSV")
    score.add_argument("--out", required=True, help="output directory")
    score.add_argument("--lookup", type=_type_lookup, default=LookupStrategy("sparse"))
    score.add_argument("--pooling", type=_type_pooling, default=PoolingSpec("max"))
    score.add_argument("--lambda", dest="fusion_weight", type=_type_unit, default=0.5)
    score.add_argument("--threads", type=_type_nonneg_int, default=None,
                       help=f"worker threads; 0 = machine default ({THREADS_ENV} as fallback)")
    score.add_argument("--save-maps", action="store_true", help="write patch-grid .npy maps")
    score.add_argument("--heatmaps", action="store_true", help="write grayscale PNG heatmaps")
    score.add_argument("--upsample", type=_type_size, default=None, metavar="HxW")
    score.add_argument("--smooth-sigma", type=float, default=4.0)
    score.set_defaults(handler=cmd_score)

    evaluate = commands.add_parser("eval", help="aggregate score files into a report")
    evaluate.add_argument("--scores", nargs="+", required=True, help="scores.csv files")
    evaluate.add_argument("--manifest", default=None, help="query manifest with masks")
    evaluate.add_argument("--maps", default=None, help="directory of patch-grid .npy maps")
    evaluate.add_argument("--out", required=True, help="report JSON to write")
    evaluate.add_argument("--fpr-limit", type=float, default=0.3)
    evaluate.add_argument("--pixel-res", choices=("map", "grid"), default="map",
                          help="on shape mismatch, upsample the map or downscale the mask")
    evaluate.set_defaults(handler=cmd_eval)

    synth = commands.add_parser("synth", help="generate a synthetic case on disk")
    _add_spec_args(synth, with_shots=True)
    synth.add_argument("--out", required=True, help="output directory")
    synth.set_defaults(handler=cmd_synth)

    ablate = commands.add_parser("ablate", help="sweep one knob on synthetic cases")
    _add_spec_args(ablate, with_shots=False)
    ablate.add_argument("--axis", choices=ABLATION_AXES, required=True)
    ablate.add_argument("--values", default=None, help="comma-separated axis values")
    ablate.add_argument("--shots", type=_type_int_list, default=[1, 2, 4])
    ablate.add_argument("--out", required=True, help="output directory")
    ablate.set_defaults(handler=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.handler(args)
    except MetricUndefinedError as exc:
        return _fail("metric", exc, EXIT_METRIC)
    except (ValidationError, FormatError) as exc:
        return _fail("data", exc, EXIT_DATA)
    except OSError as exc:
        return _fail("data", exc, EXIT_DATA)


def _fail(category: str, exc: Exception, code: int) -> int:
    message = " ".join(str(exc).split())
    print(f"{category}: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
