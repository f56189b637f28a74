import struct

import numpy as np
import pytest

from activedc.features import (
    FeatureFormatError,
    FeaturePool,
    LabelFile,
    l2_normalize,
    load_features,
    load_labels,
    save_features,
    save_labels,
)


def test_load_csv(tmp_path):
    path = tmp_path / "pool.csv"
    path.write_text("1,0\n0,1\n0.6,0.8\n")
    pool = load_features(path, "csv")
    assert (pool.count, pool.dim) == (3, 2)
    assert not pool.normalized
    np.testing.assert_array_equal(pool.data[2], np.float32([0.6, 0.8]))


def test_csv_ragged_row_names_row(tmp_path):
    path = tmp_path / "pool.csv"
    path.write_text("1,0\n0,1,2\n")
    with pytest.raises(FeatureFormatError, match="row 1"):
        load_features(path, "csv")


def test_csv_nan_rejected(tmp_path):
    path = tmp_path / "pool.csv"
    path.write_text("1,0\nnan,1\n")
    with pytest.raises(FeatureFormatError, match="row 1"):
        load_features(path, "csv")


def test_binary_empty_pool(tmp_path):
    path = tmp_path / "empty.adcf"
    path.write_bytes(struct.pack("<4sIQII", b"ADCF", 1, 0, 4, 0))
    with pytest.raises(FeatureFormatError, match="empty pool"):
        load_features(path, "binary")


def test_binary_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "bad.adcf"
    path.write_bytes(struct.pack("<4sIQII", b"XXXX", 1, 1, 1, 0) + b"\0\0\0\0")
    with pytest.raises(FeatureFormatError, match="magic"):
        load_features(path)
    path.write_bytes(struct.pack("<4sIQII", b"ADCF", 1, 2, 2, 0) + b"\0" * 12)
    with pytest.raises(FeatureFormatError, match="payload"):
        load_features(path)


def test_binary_inf_payload_names_row(tmp_path):
    data = np.zeros((3, 2), dtype="<f4")
    data[2, 1] = np.inf
    path = tmp_path / "inf.adcf"
    path.write_bytes(struct.pack("<4sIQII", b"ADCF", 1, 3, 2, 0) + data.tobytes())
    with pytest.raises(FeatureFormatError, match="row 2"):
        load_features(path)


def test_binary_header_layout(tmp_path):
    pool = FeaturePool(np.float32([[1, 2, 3]]))
    path = tmp_path / "p.adcf"
    save_features(pool, path)
    raw = path.read_bytes()
    assert raw[:4] == b"ADCF"
    assert struct.unpack_from("<IQII", raw, 4) == (1, 1, 3, 0)
    assert np.frombuffer(raw[24:], "<f4").tolist() == [1.0, 2.0, 3.0]


def test_binary_round_trip_bitwise(tmp_path, rng):
    data = rng.standard_normal((100, 16)).astype(np.float32)
    path = tmp_path / "p.adcf"
    save_features(FeaturePool(data), path)
    back = load_features(path)
    assert back.data.tobytes() == data.tobytes()
    assert not back.normalized


def test_normalized_flag_round_trip(tmp_path, rng):
    pool = l2_normalize(FeaturePool(rng.standard_normal((20, 8))))
    path = tmp_path / "p.adcf"
    save_features(pool, path)
    back = load_features(path)
    assert back.normalized
    again_path = tmp_path / "q.adcf"
    save_features(back, again_path)
    assert load_features(again_path).data.tobytes() == back.data.tobytes()


def test_normalize_analytic():
    pool = l2_normalize(FeaturePool(np.array([[3.0, 4.0]])))
    np.testing.assert_allclose(pool.data, [[0.6, 0.8]], atol=1e-15)
    assert pool.normalized


def test_normalize_idempotent(rng):
    once = l2_normalize(FeaturePool(rng.standard_normal((50, 8))))
    twice = l2_normalize(once)
    np.testing.assert_allclose(twice.data, once.data, atol=1e-12, rtol=0)
    np.testing.assert_allclose(np.linalg.norm(once.data, axis=1), 1.0, atol=1e-12)


def test_normalize_zero_row():
    with pytest.raises(ValueError, match="row 1"):
        l2_normalize(FeaturePool(np.array([[1.0, 0.0], [0.0, 0.0]])))


def test_pool_flagged_normalized_must_be_unit():
    with pytest.raises(ValueError):
        FeaturePool(np.array([[2.0, 0.0]]), normalized=True)


def test_pool_is_read_only(rng):
    pool = FeaturePool(rng.standard_normal((3, 2)))
    with pytest.raises(ValueError):
        pool.data[0, 0] = 1.0


def test_labels_read(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("0,3\n5,1\n")
    assert load_labels(path).entries == [(0, 3), (5, 1)]


def test_labels_duplicate(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("0,3\n0,2\n")
    with pytest.raises(ValueError, match="duplicate"):
        load_labels(path)


def test_labels_round_trip_and_lookup(tmp_path):
    labels = LabelFile(np.array([4, 1, 7]), np.array([2, 0, 1]))
    path = tmp_path / "l.csv"
    save_labels(labels, path)
    back = load_labels(path)
    assert back.entries == labels.entries
    assert back.lookup([7, 4]).tolist() == [1, 2]
    with pytest.raises(KeyError):
        back.lookup([3])
    assert back.dense(8).tolist() == [-1, 0, -1, -1, 2, -1, -1, 1]


def test_labels_out_of_range_for_pool(rng):
    labels = LabelFile(np.array([0, 9]), np.array([0, 1]))
    with pytest.raises(ValueError, match="out of range"):
        labels.check_against(FeaturePool(rng.standard_normal((5, 2))))
