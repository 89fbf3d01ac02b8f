"""Memory bank construction, reconstruction, anomaly maps, bank files."""

import numpy as np
import pytest

from hypermatch import (
    DimensionError,
    FeatureSet,
    LayerFeatures,
    LookupStrategy,
    ValidationError,
    anomaly_map,
    build_memory_bank,
    hyperedge_reconstruct,
    normalize_rows,
    read_bank_file,
    upsample_map,
    weights_matrix,
    write_bank_file,
)
from hypermatch.matching import BankLayer

from helpers import orthonormal_featureset, random_featureset

SPARSE = LookupStrategy("sparse")
DENSE = LookupStrategy("dense")
MAX = LookupStrategy("max")


def _basis_featureset(image_id, rows, grid, dim, layer_indices=(1,)):
    """Patch rows picked from the standard basis, exactly unit and orthogonal."""
    eye = np.eye(dim, dtype=np.float32)
    patches = eye[list(rows)]
    layers = [
        LayerFeatures(i, patches.copy(), patches.mean(axis=0).astype(np.float32))
        for i in layer_indices
    ]
    return FeatureSet(image_id, grid, (64, 64), layers)


# ------------------------------------------------------------- bank build


def test_bank_stacks_image_major():
    rng = np.random.default_rng(0)
    a = random_featureset(rng, image_id="a", grid=(2, 2), dim=6, layer_indices=(1, 4))
    b = random_featureset(rng, image_id="b", grid=(2, 2), dim=6, layer_indices=(1, 4))
    bank = build_memory_bank([a, b], normalization="none")
    assert bank.shot_count == 2
    assert bank.grid == (2, 2)
    assert bank.layer_indices == [1, 4]
    for position in range(2):
        expected = np.concatenate(
            [a.layers[position].patches, b.layers[position].patches], axis=0
        )
        assert np.array_equal(bank.layers[position].patches, expected)
        assert np.array_equal(
            bank.layers[position].cls,
            np.stack([a.layers[position].cls, b.layers[position].cls]),
        )


def test_bank_l2_normalizes_rows():
    rng = np.random.default_rng(1)
    support = random_featureset(rng, grid=(2, 2), dim=6)
    bank = build_memory_bank([support], normalization="l2")
    for layer in bank.layers:
        assert layer.patches.dtype == np.float32
        assert np.allclose(np.linalg.norm(layer.patches, axis=1), 1.0, atol=1e-6)
        assert np.allclose(np.linalg.norm(layer.cls, axis=1), 1.0, atol=1e-6)


def test_bank_rejects_mismatched_supports():
    rng = np.random.default_rng(2)
    base = random_featureset(rng, grid=(2, 2), dim=6, layer_indices=(1, 4))
    with pytest.raises(ValidationError):
        build_memory_bank([])
    with pytest.raises(DimensionError):
        build_memory_bank([base, random_featureset(rng, grid=(2, 3), dim=6, layer_indices=(1, 4))])
    with pytest.raises(DimensionError):
        build_memory_bank([base, random_featureset(rng, grid=(2, 2), dim=6, layer_indices=(1, 5))])
    with pytest.raises(DimensionError):
        build_memory_bank([base, random_featureset(rng, grid=(2, 2), dim=7, layer_indices=(1, 4))])
    with pytest.raises(ValidationError):
        build_memory_bank([base], normalization="zscore")


# ------------------------------------------------------- reconstruction


def test_single_row_bank_forces_full_weight():
    support = _basis_featureset("s", rows=[0], grid=(1, 1), dim=4)
    bank = build_memory_bank([support], normalization="none")
    query = _basis_featureset("q", rows=[2], grid=(1, 1), dim=4)
    for strategy in (SPARSE, DENSE, MAX, LookupStrategy("topn", 3)):
        reconstruction = hyperedge_reconstruct(query.layers[0], bank.layers[0], strategy)
        assert np.array_equal(reconstruction, np.asarray(support.layers[0].patches, dtype=np.float64))


def test_max_strategy_copies_argmax_row():
    rng = np.random.default_rng(3)
    support = random_featureset(rng, grid=(2, 3), dim=8, layer_indices=(1,))
    bank = build_memory_bank([support], normalization="none")
    query = random_featureset(rng, grid=(2, 3), dim=8, layer_indices=(1,))
    reconstruction = hyperedge_reconstruct(query.layers[0], bank.layers[0], MAX)
    bank_rows = np.asarray(bank.layers[0].patches, dtype=np.float64)
    similarities = np.asarray(query.layers[0].patches, np.float64) @ bank_rows.T
    picked = bank_rows[np.argmax(similarities, axis=1)]
    assert np.array_equal(reconstruction, picked)


def test_equal_affinity_rows_share_weight_and_rest_are_exact_zeros():
    # q hits three basis rows with identical similarity and two with zero:
    # the projection splits mass exactly three ways and zeroes the rest
    s = 1.0 / np.sqrt(3.0)
    z = np.array([[s, s, s, 0.0, 0.0]])
    weights = weights_matrix(z, SPARSE)[0]
    assert np.array_equal(weights, np.array([1.0, 1.0, 1.0, 0.0, 0.0]) / 3.0)

    eye = np.eye(8, dtype=np.float32)
    bank_layer = BankLayer(1, eye[:5].copy(), eye[:1].copy())
    query_vec = np.zeros((1, 8), dtype=np.float32)
    query_vec[0, :3] = np.float32(s)
    query_layer = LayerFeatures(1, query_vec, query_vec[0])
    reconstruction = hyperedge_reconstruct(query_layer, bank_layer, SPARSE)
    expected = np.zeros((1, 8))
    expected[0, :3] = 1.0 / 3.0
    assert np.array_equal(reconstruction, expected)


def test_self_support_scores_vanish_on_orthonormal_frames():
    rng = np.random.default_rng(4)
    support = orthonormal_featureset(rng, grid=(3, 3), dim=16)
    bank = build_memory_bank([support], normalization="l2")
    amap = anomaly_map(support, bank, SPARSE)
    assert float(np.max(amap.grid)) <= 1e-6


def test_dimension_mismatches_raise():
    rng = np.random.default_rng(5)
    support = random_featureset(rng, grid=(2, 2), dim=6, layer_indices=(1, 4))
    bank = build_memory_bank([support])
    with pytest.raises(DimensionError):
        anomaly_map(random_featureset(rng, grid=(2, 3), dim=6, layer_indices=(1, 4)), bank, SPARSE)
    with pytest.raises(DimensionError):
        anomaly_map(random_featureset(rng, grid=(2, 2), dim=6, layer_indices=(1, 5)), bank, SPARSE)
    with pytest.raises(DimensionError):
        anomaly_map(random_featureset(rng, grid=(2, 2), dim=7, layer_indices=(1, 4)), bank, SPARSE)


def test_layer_scores_average_exactly():
    # layer 1: query equals the support row (score 0); layer 2: query is
    # orthogonal to every support row (score 1); the mean must be exactly 0.5
    dim = 8
    eye = np.eye(dim, dtype=np.float32)
    support = FeatureSet(
        "s",
        (1, 1),
        (16, 16),
        [LayerFeatures(1, eye[:1].copy(), eye[0]), LayerFeatures(2, eye[:1].copy(), eye[0])],
    )
    query = FeatureSet(
        "q",
        (1, 1),
        (16, 16),
        [LayerFeatures(1, eye[:1].copy(), eye[0]), LayerFeatures(2, eye[1:2].copy(), eye[1])],
    )
    bank = build_memory_bank([support], normalization="none")
    amap = anomaly_map(query, bank, SPARSE)
    assert amap.grid.shape == (1, 1)
    assert amap.grid[0, 0] == 0.5


def test_opposite_vector_scores_two():
    dim = 4
    eye = np.eye(dim, dtype=np.float32)
    support = FeatureSet("s", (1, 1), (16, 16), [LayerFeatures(1, eye[:1].copy(), eye[0])])
    query = FeatureSet("q", (1, 1), (16, 16), [LayerFeatures(1, (-eye[:1]).copy(), -eye[0])])
    bank = build_memory_bank([support], normalization="none")
    amap = anomaly_map(query, bank, SPARSE)
    assert amap.grid[0, 0] == 2.0


def test_map_metadata_and_shape():
    rng = np.random.default_rng(6)
    support = random_featureset(rng, image_id="sup", grid=(3, 4), dim=8, layer_indices=(2, 7))
    bank = build_memory_bank([support])
    query = random_featureset(rng, image_id="qry", grid=(3, 4), dim=8, layer_indices=(2, 7))
    amap = anomaly_map(query, bank, DENSE)
    assert amap.grid.shape == (3, 4)
    assert amap.image_id == "qry"
    assert amap.layer_indices == [2, 7]
    assert np.all(amap.grid >= 0.0) and np.all(amap.grid <= 2.0)


# ------------------------------------------------------------- upsample


def test_upsample_constant_is_exact():
    grid = np.full((4, 4), 0.3125)
    out = upsample_map(grid, 17, 23)
    assert out.shape == (17, 23)
    assert np.all(out == 0.3125)


def test_upsample_single_cell_broadcasts():
    out = upsample_map(np.array([[1.5]]), 5, 7)
    assert np.all(out == 1.5)


def test_upsample_preserves_corners_and_monotonicity():
    grid = np.array([[0.0, 1.0], [2.0, 3.0]])
    out = upsample_map(grid, 8, 8)
    assert out[0, 0] == 0.0
    assert out[-1, -1] == 3.0
    assert np.all(np.diff(out, axis=0) >= 0.0)
    assert np.all(np.diff(out, axis=1) >= 0.0)
    assert out.min() >= 0.0 and out.max() <= 3.0


def test_upsample_smoothing_keeps_constants():
    grid = np.full((3, 3), 0.7)
    out = upsample_map(grid, 32, 32, smooth_sigma=4.0)
    assert np.allclose(out, 0.7, atol=1e-12)


def test_upsample_rejects_bad_arguments():
    with pytest.raises(DimensionError):
        upsample_map(np.zeros((2, 2)), 0, 4)
    with pytest.raises(ValidationError):
        upsample_map(np.zeros((2, 2)), 4, 4, smooth_sigma=-1.0)
    with pytest.raises(DimensionError):
        upsample_map(np.zeros(4), 4, 4)


# ------------------------------------------------------------- bank file


def test_bank_file_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    supports = [
        random_featureset(rng, image_id=f"s{i}", grid=(2, 3), dim=5, layer_indices=(1, 9))
        for i in range(3)
    ]
    bank = build_memory_bank(supports, normalization="l2")
    path = tmp_path / "bank.hyb"
    write_bank_file(bank, str(path))
    loaded = read_bank_file(str(path))
    assert loaded.grid == bank.grid
    assert loaded.shot_count == 3
    assert loaded.normalization == "l2"
    assert loaded.layer_indices == [1, 9]
    for got, expected in zip(loaded.layers, bank.layers):
        assert np.array_equal(got.patches, expected.patches)
        assert np.array_equal(got.cls, expected.cls)


def test_bank_file_rejects_feature_magic(tmp_path):
    rng = np.random.default_rng(8)
    from hypermatch import write_feature_file, FormatError

    path = tmp_path / "feat.feat"
    write_feature_file(random_featureset(rng), str(path))
    with pytest.raises(FormatError, match="magic"):
        read_bank_file(str(path))


def test_normalize_rows_keeps_zero_rows():
    matrix = np.array([[3.0, 4.0], [0.0, 0.0]])
    result = normalize_rows(matrix)
    assert np.allclose(result[0], [0.6, 0.8])
    assert np.array_equal(result[1], [0.0, 0.0])
