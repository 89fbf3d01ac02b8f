"""Ranking metrics for image- and pixel-level anomaly evaluation.

Conventions shared by every metric here:

* higher score means more anomalous; a prediction at threshold t is
  ``score >= t``,
* AUROC is the Mann-Whitney U statistic normalized by n_pos * n_neg,
  counting ties as one half (midranks),
* average precision and best F1 sweep the unique score values as
  thresholds, grouping tied scores,
* the region-overlap curve (PRO) averages per-connected-region overlap
  (8-connectivity) against the global false-positive rate, integrated by
  trapezoid from 0 to ``fpr_limit`` and normalized by that limit.  Its
  threshold grid is the unique pixel scores, capped at 5000 values plus a
  sentinel above the maximum.

Every metric is invariant under strictly increasing transforms of the
scores because only ranks and tie groups enter the computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, stats

from .errors import DimensionError, MetricUndefinedError, ValidationError

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
_MAX_PRO_THRESHOLDS = 5000


def _scores_and_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DimensionError("scores and labels must have equal length")
    if scores.size < 2:
        raise MetricUndefinedError("ranking needs at least two samples")
    if not np.isfinite(scores).all():
        raise ValidationError("scores must be finite")
    if not np.isin(labels, (0, 1)).all():
        raise ValidationError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def auroc(scores, labels) -> float:
    """Area under the ROC curve via midranks (ties count one half)."""
    scores, labels = _scores_and_labels(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUROC needs both classes present")
    ranks = stats.rankdata(scores, method="average")
    u_statistic = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_statistic / (n_pos * n_neg))


def _threshold_groups(scores: np.ndarray, labels: np.ndarray):
    """Cumulative true/false positives at each unique descending threshold."""
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    group_end = np.nonzero(np.diff(sorted_scores))[0]
    group_end = np.r_[group_end, scores.size - 1]
    true_positive = np.cumsum(sorted_labels)[group_end]
    false_positive = group_end + 1 - true_positive
    return sorted_scores[group_end], true_positive, false_positive


def average_precision(scores, labels) -> float:
    """Step-integrated precision-recall area with tied scores grouped."""
    scores, labels = _scores_and_labels(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise MetricUndefinedError("average precision needs a positive sample")
    _, true_positive, false_positive = _threshold_groups(scores, labels)
    precision = true_positive / (true_positive + false_positive)
    recall = true_positive / n_pos
    recall_steps = np.diff(np.r_[0.0, recall])
    return float((recall_steps * precision).sum())


def f1_max(scores, labels) -> float:
    """Best F1 over thresholds at the unique score values."""
    scores, labels = _scores_and_labels(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise MetricUndefinedError("F1 needs a positive sample")
    _, true_positive, false_positive = _threshold_groups(scores, labels)
    f1 = 2.0 * true_positive / (true_positive + false_positive + n_pos)
    return float(f1.max())


@dataclass
class SegmentationCase:
    """One image's pixel scores next to its binary ground-truth mask."""

    scores: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.mask = np.asarray(self.mask)
        if self.scores.ndim != 2 or self.scores.shape != self.mask.shape:
            raise DimensionError("scores and mask must be equal-shape 2-D arrays")
        if not np.isfinite(self.scores).all():
            raise ValidationError("pixel scores must be finite")
        if not np.isin(self.mask, (0, 1)).all():
            raise ValidationError("mask must be binary")
        self.mask = self.mask.astype(bool)


def pixel_metrics(cases: list[SegmentationCase]) -> tuple[float, float, float]:
    """(AUROC, best F1, AP) over all pixels of all cases pooled together."""
    if not cases:
        raise MetricUndefinedError("pixel metrics need at least one case")
    scores = np.concatenate([case.scores.ravel() for case in cases])
    labels = np.concatenate([case.mask.ravel().astype(np.int64) for case in cases])
    return auroc(scores, labels), f1_max(scores, labels), average_precision(scores, labels)


def _pro_thresholds(all_scores: np.ndarray) -> np.ndarray:
    unique = np.unique(all_scores)
    if unique.size > _MAX_PRO_THRESHOLDS:
        picks = np.linspace(0, unique.size - 1, _MAX_PRO_THRESHOLDS).round().astype(np.intp)
        unique = unique[np.unique(picks)]
    sentinel = np.nextafter(unique[-1], np.inf)
    return np.r_[unique, sentinel][::-1]


def pro(cases: list[SegmentationCase], fpr_limit: float = 0.3) -> float:
    """Per-region overlap averaged over all ground-truth regions vs global FPR.

    Integrated by trapezoid over the curve traced in descending-threshold
    order (the sentinel threshold contributes the (0, 0) endpoint) and cut
    at ``fpr_limit`` by linear interpolation, then normalized by the limit.
    """
    if not 0 < fpr_limit <= 1:
        raise ValidationError("fpr_limit must lie in (0, 1]")
    if not cases:
        raise MetricUndefinedError("PRO needs at least one case")
    region_scores: list[np.ndarray] = []
    normal_scores: list[np.ndarray] = []
    for case in cases:
        labeled, count = ndimage.label(case.mask, structure=_EIGHT_CONNECTED)
        for region in range(1, count + 1):
            region_scores.append(np.sort(case.scores[labeled == region]))
        normal_scores.append(case.scores[~case.mask])
    if not region_scores:
        raise MetricUndefinedError("PRO needs at least one anomalous region")
    normal = np.sort(np.concatenate(normal_scores))
    if normal.size == 0:
        raise MetricUndefinedError("PRO needs at least one normal pixel")
    thresholds = _pro_thresholds(
        np.concatenate([np.concatenate(region_scores), normal])
    )
    false_positive_rate = 1.0 - np.searchsorted(normal, thresholds, side="left") / normal.size
    overlap = np.zeros(thresholds.size, dtype=np.float64)
    for pixels in region_scores:
        overlap += 1.0 - np.searchsorted(pixels, thresholds, side="left") / pixels.size
    overlap /= len(region_scores)
    return _integrate_to_limit(false_positive_rate, overlap, fpr_limit)


def _integrate_to_limit(fpr: np.ndarray, overlap: np.ndarray, limit: float) -> float:
    """Trapezoid over threshold-ordered curve points, cut at ``fpr = limit``."""
    area = 0.0
    for i in range(1, fpr.size):
        left, right = fpr[i - 1], fpr[i]
        if right >= limit:
            if right > left:
                cut = overlap[i - 1] + (overlap[i] - overlap[i - 1]) * (limit - left) / (
                    right - left
                )
            else:
                cut = overlap[i]
            area += (limit - left) * 0.5 * (overlap[i - 1] + cut)
            return float(area / limit)
        area += (right - left) * 0.5 * (overlap[i - 1] + overlap[i])
    return float(area / limit)


@dataclass
class EvalReport:
    """Image- and pixel-level metrics for one evaluation run."""

    i_auroc: float
    i_f1: float
    i_ap: float
    p_auroc: float | None = None
    p_f1: float | None = None
    p_ap: float | None = None
    p_pro: float | None = None
    per_category: dict[str, dict[str, float | None]] = field(default_factory=dict)

    METRIC_FIELDS = ("i_auroc", "i_f1", "i_ap", "p_auroc", "p_f1", "p_ap", "p_pro")

    def metric_dict(self) -> dict[str, float | None]:
        return {name: getattr(self, name) for name in self.METRIC_FIELDS}

    def to_json_dict(self) -> dict:
        payload: dict = {k: _jsonable(v) for k, v in self.metric_dict().items()}
        if self.per_category:
            payload["per_category"] = {
                category: {k: _jsonable(v) for k, v in values.items()}
                for category, values in self.per_category.items()
            }
        return payload


def _jsonable(value):
    return None if value is None else float(value)


def compute_report(
    image_scores,
    image_labels,
    segmentation_cases: list[SegmentationCase] | None = None,
    fpr_limit: float = 0.3,
) -> EvalReport:
    """Bundle the image metrics, and the pixel metrics when cases are given."""
    report = EvalReport(
        i_auroc=auroc(image_scores, image_labels),
        i_f1=f1_max(image_scores, image_labels),
        i_ap=average_precision(image_scores, image_labels),
    )
    if segmentation_cases:
        report.p_auroc, report.p_f1, report.p_ap = pixel_metrics(segmentation_cases)
        report.p_pro = pro(segmentation_cases, fpr_limit=fpr_limit)
    return report
