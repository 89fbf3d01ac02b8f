"""Synthetic case generation and in-memory evaluation."""

import numpy as np
import pytest

from hypermatch import (
    LookupStrategy,
    MetricUndefinedError,
    SynthSpec,
    ValidationError,
    evaluate_case,
    generate,
    run_ablation,
)


def test_generation_is_bit_exact_per_seed():
    spec = SynthSpec(seed=11)
    first = generate(spec)
    second = generate(spec)
    assert np.array_equal(first.labels, second.labels)
    for a, b in zip(first.supports + first.queries, second.supports + second.queries):
        assert a.image_id == b.image_id
        for layer_a, layer_b in zip(a.layers, b.layers):
            assert np.array_equal(layer_a.patches, layer_b.patches)
            assert np.array_equal(layer_a.cls, layer_b.cls)
    for mask_a, mask_b in zip(first.masks, second.masks):
        assert np.array_equal(mask_a, mask_b)


def test_different_seeds_differ():
    a = generate(SynthSpec(seed=0))
    b = generate(SynthSpec(seed=1))
    assert not np.array_equal(a.supports[0].layers[0].patches, b.supports[0].layers[0].patches)


def test_case_shapes_and_counts():
    spec = SynthSpec(seed=2, shots=3, grid=(4, 5), dim=16, layer_count=2, query_count=10)
    case = generate(spec)
    assert len(case.supports) == 3
    assert len(case.queries) == 10
    assert case.labels.shape == (10,)
    assert len(case.masks) == 10
    for features in case.supports + case.queries:
        assert features.grid == (4, 5)
        assert features.dim == 16
        assert len(features.layers) == 2
        for layer in features.layers:
            assert layer.patches.shape == (20, 16)
            assert np.allclose(np.linalg.norm(layer.patches, axis=1), 1.0, atol=1e-5)


def test_anomaly_rate_controls_label_count():
    case = generate(SynthSpec(seed=3, query_count=10, anomaly_rate=0.3))
    assert int(case.labels.sum()) == 3
    zero = generate(SynthSpec(seed=3, query_count=10, anomaly_rate=0.0))
    assert int(zero.labels.sum()) == 0


def test_masks_mark_exactly_the_planted_cells():
    spec = SynthSpec(seed=4, anomaly_cells=5, noise_sigma=0.0)
    case = generate(spec)
    for label, mask in zip(case.labels, case.masks):
        assert mask.shape == spec.grid
        assert int(mask.sum()) == (5 if label == 1 else 0)


def test_planted_cells_score_above_all_normal_cells():
    spec = SynthSpec(seed=5, noise_sigma=0.0)
    case = generate(spec)
    records, report = evaluate_case(case)
    assert report.i_auroc == 1.0
    from hypermatch import anomaly_map, build_memory_bank

    bank = build_memory_bank(case.supports, "l2")
    for features, label, mask in zip(case.queries, case.labels, case.masks):
        if label == 0:
            continue
        amap = anomaly_map(features, bank, LookupStrategy("sparse"))
        planted = amap.grid[mask.astype(bool)]
        clean = amap.grid[~mask.astype(bool)]
        assert planted.min() > clean.max()


def test_infeasible_dimensions_rejected():
    with pytest.raises(ValidationError):
        generate(SynthSpec(seed=0, n_clusters=10, dim=8))
    with pytest.raises(ValidationError):
        generate(SynthSpec(seed=0, anomaly_cells=100, grid=(3, 3)))
    with pytest.raises(ValidationError):
        generate(SynthSpec(seed=0, anomaly_rate=1.5))


def test_single_class_case_has_undefined_image_metrics():
    case = generate(SynthSpec(seed=6, anomaly_rate=0.0))
    with pytest.raises(MetricUndefinedError):
        evaluate_case(case)


def test_lambda_zero_reduces_to_cls_score():
    case = generate(SynthSpec(seed=7))
    records, _ = evaluate_case(case, fusion_weight=0.0)
    for record in records:
        assert record.s_image == record.s_cls
    records, _ = evaluate_case(case, fusion_weight=1.0)
    for record in records:
        assert record.s_image == record.s_map


def test_ablation_axis_cardinality_and_labels():
    case = generate(SynthSpec(seed=8))
    rows = run_ablation(case, "lookup", None)
    assert [label for label, _ in rows] == ["max", "top10", "dense", "sparse"]
    rows = run_ablation(case, "lambda", ["0", "0.25", "1"])
    assert [label for label, _ in rows] == ["0", "0.25", "1"]
    rows = run_ablation(case, "pooling", None)
    assert len(rows) == 3
    with pytest.raises(ValidationError):
        run_ablation(case, "temperature", None)


def test_distractors_do_not_break_sparse_detection():
    spec = SynthSpec(seed=9, distractor_count=6)
    case = generate(spec)
    _, sparse_report = evaluate_case(case, strategy=LookupStrategy("sparse"))
    assert sparse_report.i_auroc == 1.0


def test_report_contains_pixel_metrics():
    case = generate(SynthSpec(seed=10))
    _, report = evaluate_case(case)
    assert report.p_auroc is not None
    assert report.p_pro is not None
    assert 0.0 <= report.p_pro <= 1.0
