"""Sharding invariants and the IDX file format round trip."""

import json

import numpy as np
import pytest

from asyncfl.data import (
    DataShard,
    load_idx_dataset,
    shard_manifest,
    split_dataset,
    write_idx_pair,
)
from asyncfl.errors import IdxCountMismatchError, IdxMagicError, IdxTruncatedError
from asyncfl.rng import substream


def toy_dataset(rng, per_class=30, classes=10, dim=3):
    features = rng.standard_normal((per_class * classes, dim))
    labels = np.repeat(np.arange(classes), per_class)
    perm = rng.permutation(len(labels))
    return features[perm], labels[perm]


def assert_partition(shards, total):
    all_ids = np.concatenate([s.ids for s in shards])
    assert len(all_ids) == total
    assert len(np.unique(all_ids)) == total


def test_iid_split_partitions_dataset():
    rng = substream(1, "data")
    features, labels = toy_dataset(rng)
    shards = split_dataset(features, labels, 7, "iid", rng)
    assert len(shards) == 7
    assert_partition(shards, 300)
    sizes = [len(s) for s in shards]
    assert max(sizes) - min(sizes) <= 1


def test_iid_shard_features_match_ids():
    rng = substream(2, "data")
    features, labels = toy_dataset(rng)
    shards = split_dataset(features, labels, 4, "iid", rng)
    for s in shards:
        assert np.array_equal(s.features, features[s.ids])
        assert np.array_equal(s.labels, labels[s.ids])


def test_two_class_split_limits_labels_per_client():
    rng = substream(3, "data")
    features, labels = toy_dataset(rng)
    shards = split_dataset(features, labels, 5, "two-class-non-iid", rng)
    assert_partition(shards, 300)
    for s in shards:
        assert 1 <= len(s.label_set()) <= 2


def test_two_class_split_reuses_classes_for_many_clients():
    rng = substream(4, "data")
    features, labels = toy_dataset(rng)
    # 100 clients need 200 class slots from 10 classes: 20 passes
    shards = split_dataset(features, labels, 100, "two-class-non-iid", rng)
    assert_partition(shards, 300)
    for s in shards:
        assert len(s.label_set()) <= 2
    covered = set()
    for s in shards:
        covered |= s.label_set()
    assert covered == set(range(10))


def test_two_class_split_needs_two_classes():
    rng = substream(5, "data")
    features = rng.standard_normal((10, 2))
    labels = np.zeros(10, dtype=int)
    with pytest.raises(ValueError):
        split_dataset(features, labels, 2, "two-class-non-iid", rng)


def test_unknown_split_mode():
    rng = substream(6, "data")
    with pytest.raises(ValueError):
        split_dataset(np.zeros((4, 2)), np.zeros(4, dtype=int), 2, "dirichlet", rng)


def test_split_rejects_length_mismatch():
    rng = substream(7, "data")
    with pytest.raises(IdxCountMismatchError):
        split_dataset(np.zeros((4, 2)), np.zeros(5, dtype=int), 2, "iid", rng)


def test_shard_manifest_is_json_with_expected_fields():
    rng = substream(8, "data")
    features, labels = toy_dataset(rng)
    shards = split_dataset(features, labels, 3, "iid", rng)
    manifest = json.loads(shard_manifest(shards))
    assert [entry["owner"] for entry in manifest] == [0, 1, 2]
    assert sum(entry["size"] for entry in manifest) == 300
    for entry, shard in zip(manifest, shards):
        assert entry["labels"] == sorted(shard.label_set())
        assert entry["ids"] == shard.ids.tolist()


def test_idx_round_trip(tmp_path):
    rng = substream(9, "idx")
    images = rng.random((17, 6))  # 2x3 pixel grid
    labels = rng.integers(0, 10, size=17)
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
    write_idx_pair(ip, lp, images, labels, rows=2, cols=3)
    loaded_x, loaded_y = load_idx_dataset(ip, lp)
    assert loaded_x.shape == (17, 6)
    assert np.array_equal(loaded_y, labels)
    # quantized to 8 bits on the way out
    assert np.max(np.abs(loaded_x - images)) <= 1.0 / 255.0


def test_idx_bad_magic(tmp_path):
    rng = substream(10, "idx")
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
    write_idx_pair(ip, lp, rng.random((3, 4)), np.zeros(3, dtype=int), rows=2, cols=2)
    data = bytearray(ip.read_bytes())
    data[3] = 0x99
    ip.write_bytes(bytes(data))
    with pytest.raises(IdxMagicError):
        load_idx_dataset(ip, lp)


def test_idx_truncated_body(tmp_path):
    rng = substream(11, "idx")
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
    write_idx_pair(ip, lp, rng.random((3, 4)), np.zeros(3, dtype=int), rows=2, cols=2)
    ip.write_bytes(ip.read_bytes()[:-5])
    with pytest.raises(IdxTruncatedError):
        load_idx_dataset(ip, lp)


def test_idx_count_mismatch(tmp_path):
    rng = substream(12, "idx")
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
    write_idx_pair(ip, lp, rng.random((3, 4)), np.zeros(3, dtype=int), rows=2, cols=2)
    ip2, lp2 = tmp_path / "img2.idx", tmp_path / "lbl2.idx"
    write_idx_pair(ip2, lp2, rng.random((4, 4)), np.zeros(4, dtype=int), rows=2, cols=2)
    with pytest.raises(IdxCountMismatchError):
        load_idx_dataset(ip, lp2)


def test_shard_len_and_labels():
    shard = DataShard(
        owner=0,
        ids=np.arange(4),
        features=np.zeros((4, 2)),
        labels=np.array([1, 1, 3, 3]),
    )
    assert len(shard) == 4
    assert shard.label_set() == {1, 3}
