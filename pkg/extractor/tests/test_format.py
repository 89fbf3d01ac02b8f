"""Feature-file writer/reader: layout, round-trips, rejection of bad files."""

import struct

import numpy as np
import pytest

from vitfeat.format import FeatureFormatError, ImageFeatures, load, save


def small_features(image_id="ab"):
    patches = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    cls = np.array([0.5, -0.5], dtype=np.float32)
    return ImageFeatures(
        image_id=image_id,
        grid=(1, 2),
        source_resolution=(64, 48),
        layer_indices=[3],
        patches=[patches],
        cls=[cls],
    )


def hand_built_bytes():
    # The layout spelled out with struct, independent of the writer.
    blob = struct.pack("<8s7I", b"HYPFSAD\x00", 1, 1, 1, 2, 2, 64, 48)
    blob += struct.pack("<I", 3)
    blob += struct.pack("<I", 2) + b"ab"
    blob += struct.pack("<4f", 1.0, 2.0, 3.0, 4.0)
    blob += struct.pack("<2f", 0.5, -0.5)
    return blob


def test_writer_emits_exact_layout(tmp_path):
    path = tmp_path / "small.feat"
    save(small_features(), path)
    assert path.read_bytes() == hand_built_bytes()


def test_reader_accepts_hand_built_bytes(tmp_path):
    path = tmp_path / "hand.feat"
    path.write_bytes(hand_built_bytes())
    features = load(path)
    assert features.image_id == "ab"
    assert features.grid == (1, 2)
    assert features.source_resolution == (64, 48)
    assert features.layer_indices == [3]
    np.testing.assert_array_equal(features.patches[0],
                                  np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32))
    np.testing.assert_array_equal(features.cls[0],
                                  np.array([0.5, -0.5], dtype=np.float32))


def test_round_trip_multilayer(tmp_path):
    rng = np.random.default_rng(3)
    features = ImageFeatures(
        image_id="cat/test/crack/007",
        grid=(4, 5),
        source_resolution=(448, 448),
        layer_indices=[1, 7, 9, 10],
        patches=[rng.standard_normal((20, 16)).astype(np.float32) for _ in range(4)],
        cls=[rng.standard_normal(16).astype(np.float32) for _ in range(4)],
    )
    path = tmp_path / "multi.feat"
    save(features, path)
    loaded = load(path)
    assert loaded.image_id == features.image_id
    assert loaded.layer_indices == features.layer_indices
    for a, b in zip(loaded.patches, features.patches):
        assert a.dtype == np.float32
        np.testing.assert_array_equal(a, b)
    for a, b in zip(loaded.cls, features.cls):
        np.testing.assert_array_equal(a, b)


def test_unicode_image_id_round_trips(tmp_path):
    features = small_features(image_id="grid/über_016")
    path = tmp_path / "uni.feat"
    save(features, path)
    assert load(path).image_id == "grid/über_016"


def test_wrong_magic_rejected(tmp_path):
    blob = bytearray(hand_built_bytes())
    blob[0:8] = b"NOTMINE\x00"
    path = tmp_path / "magic.feat"
    path.write_bytes(bytes(blob))
    with pytest.raises(FeatureFormatError, match="magic"):
        load(path)


def test_unknown_version_rejected(tmp_path):
    blob = bytearray(hand_built_bytes())
    blob[8:12] = struct.pack("<I", 2)
    path = tmp_path / "version.feat"
    path.write_bytes(bytes(blob))
    with pytest.raises(FeatureFormatError, match="version"):
        load(path)


def test_zero_dimension_rejected(tmp_path):
    blob = bytearray(hand_built_bytes())
    blob[24:28] = struct.pack("<I", 0)  # dim field
    path = tmp_path / "zero.feat"
    path.write_bytes(bytes(blob))
    with pytest.raises(FeatureFormatError, match="positive"):
        load(path)


@pytest.mark.parametrize("drop", [1, 4, 9, 30])
def test_truncation_rejected(tmp_path, drop):
    blob = hand_built_bytes()
    path = tmp_path / "short.feat"
    path.write_bytes(blob[:-drop])
    with pytest.raises(FeatureFormatError, match="ends inside"):
        load(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "long.feat"
    path.write_bytes(hand_built_bytes() + b"\x00")
    with pytest.raises(FeatureFormatError, match="trailing"):
        load(path)


def test_bad_utf8_id_rejected(tmp_path):
    blob = bytearray(hand_built_bytes())
    blob[44:46] = b"\xff\xfe"  # the two id bytes (36 header + 4 layer + 4 length)
    path = tmp_path / "utf8.feat"
    path.write_bytes(bytes(blob))
    with pytest.raises(FeatureFormatError, match="UTF-8"):
        load(path)


def test_writer_rejects_non_float32():
    features = small_features()
    features.patches[0] = features.patches[0].astype(np.float64)
    with pytest.raises(FeatureFormatError, match="float32"):
        features.check()


def test_writer_rejects_duplicate_layers():
    features = small_features()
    features.layer_indices = [3, 3]
    features.patches.append(features.patches[0])
    features.cls.append(features.cls[0])
    with pytest.raises(FeatureFormatError, match="unique"):
        features.check()


def test_writer_rejects_grid_mismatch():
    features = small_features()
    features.grid = (2, 2)
    with pytest.raises(FeatureFormatError, match="expected patches"):
        features.check()


def test_failed_write_leaves_no_file(tmp_path):
    features = small_features()
    features.patches[0][0, 0] = np.nan
    with pytest.raises(FeatureFormatError, match="finite"):
        save(features, tmp_path / "bad.feat")
    assert list(tmp_path.iterdir()) == []


def test_overwrite_is_atomic_replacement(tmp_path):
    path = tmp_path / "same.feat"
    save(small_features("one"), path)
    save(small_features("two"), path)
    assert load(path).image_id == "two"
    assert [p.name for p in tmp_path.iterdir()] == ["same.feat"]
