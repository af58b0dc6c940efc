"""Dataset ingestion, client sharding, and the IDX file format.

Shards always partition the dataset: every example id lands in exactly one
shard.  The non-IID split gives each client examples from at most two
labels, cycling over label pairs without replacement within each pass when
there are more clients than label pairs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import IdxCountMismatchError, IdxMagicError, IdxTruncatedError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class DataShard:
    """One client's slice of the training set."""

    owner: int
    ids: np.ndarray  # example indices into the full dataset
    features: np.ndarray  # (m, num_features)
    labels: np.ndarray  # (m,) integer labels

    def __len__(self) -> int:
        return len(self.ids)

    def label_set(self) -> set[int]:
        return set(int(v) for v in np.unique(self.labels))


def _make_shards(
    features: np.ndarray, labels: np.ndarray, assignments: list[np.ndarray]
) -> list[DataShard]:
    return [
        DataShard(
            owner=i,
            ids=np.sort(ids),
            features=features[np.sort(ids)],
            labels=labels[np.sort(ids)],
        )
        for i, ids in enumerate(assignments)
    ]


def split_dataset(
    features: np.ndarray,
    labels: np.ndarray,
    n: int,
    mode: str,
    rng: np.random.Generator,
) -> list[DataShard]:
    """Partition a labeled dataset into ``n`` client shards.

    mode="iid": random equal-size split (remainder spread round-robin).
    mode="two-class-non-iid": each client receives examples from exactly two
    labels; label pairs are drawn without replacement within each pass.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    total = len(labels)
    if total == 0:
        raise ValueError("empty dataset")
    if features.shape[0] != total:
        raise IdxCountMismatchError(
            f"{features.shape[0]} feature rows vs {total} labels"
        )
    if n < 1:
        raise ValueError("need at least one client")
    if mode == "iid":
        perm = rng.permutation(total)
        assignments = [perm[i::n] for i in range(n)]
        return _make_shards(features, labels, assignments)
    if mode == "two-class-non-iid":
        return _split_two_class(features, labels, n, rng)
    raise ValueError(f"unknown split mode: {mode!r}")


def _split_two_class(
    features: np.ndarray, labels: np.ndarray, n: int, rng: np.random.Generator
) -> list[DataShard]:
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("two-class split needs at least 2 distinct labels")
    # Each client needs two class slots; draw classes without replacement
    # within each pass, repeating passes for n > len(classes) // 2.
    slots: list[int] = []
    while len(slots) < 2 * n:
        slots.extend(rng.permutation(classes).tolist())
    slots = slots[: 2 * n]
    client_classes = [(slots[2 * i], slots[2 * i + 1]) for i in range(n)]
    # A client whose two slots collapsed to one class still satisfies the
    # <= 2 label invariant; split each class's pool equally among its users.
    users: dict[int, list[int]] = {int(c): [] for c in classes}
    for client, (c1, c2) in enumerate(client_classes):
        users[int(c1)].append(client)
        if c2 != c1:
            users[int(c2)].append(client)
    assignments: list[list[int]] = [[] for _ in range(n)]
    for c in classes:
        pool = rng.permutation(np.flatnonzero(labels == c))
        owners = users[int(c)]
        if not owners:
            continue
        for j, chunk in enumerate(np.array_split(pool, len(owners))):
            assignments[owners[j]].extend(chunk.tolist())
    return _make_shards(features, labels, [np.array(a, dtype=int) for a in assignments])


def shard_manifest(shards: list[DataShard]) -> str:
    """JSON description of a sharding: owners, sizes, labels, example ids."""
    payload = [
        {
            "owner": s.owner,
            "size": len(s),
            "labels": sorted(s.label_set()),
            "ids": s.ids.tolist(),
        }
        for s in shards
    ]
    return json.dumps(payload, indent=2, sort_keys=True)


def _read_header(data: bytes, path: str, expected_magic: int, num_dims: int):
    header_size = 4 * (1 + num_dims)
    if len(data) < header_size:
        raise IdxTruncatedError(f"{path}: file shorter than IDX header")
    magic = struct.unpack(">i", data[:4])[0]
    if magic != expected_magic:
        raise IdxMagicError(
            f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    dims = struct.unpack(f">{num_dims}i", data[4:header_size])
    return dims, data[header_size:]


def load_idx_dataset(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Read an IDX image/label file pair.

    Returns (images, labels): images as float64 rows scaled to [0, 1] with
    shape (count, rows*cols), labels as an int array of the same length.
    """
    with open(images_path, "rb") as f:
        image_data = f.read()
    with open(labels_path, "rb") as f:
        label_data = f.read()
    (count, rows, cols), image_body = _read_header(
        image_data, str(images_path), IDX_IMAGES_MAGIC, 3
    )
    (label_count,), label_body = _read_header(
        label_data, str(labels_path), IDX_LABELS_MAGIC, 1
    )
    expected = count * rows * cols
    if len(image_body) < expected:
        raise IdxTruncatedError(
            f"{images_path}: expected {expected} pixels, found {len(image_body)}"
        )
    if len(label_body) < label_count:
        raise IdxTruncatedError(
            f"{labels_path}: expected {label_count} labels, found {len(label_body)}"
        )
    if count != label_count:
        raise IdxCountMismatchError(f"{count} images vs {label_count} labels")
    images = (
        np.frombuffer(image_body[:expected], dtype=np.uint8)
        .reshape(count, rows * cols)
        .astype(np.float64)
        / 255.0
    )
    labels = np.frombuffer(label_body[:label_count], dtype=np.uint8).astype(np.int64)
    return images, labels


def write_idx_pair(images_path, labels_path, images: np.ndarray, labels: np.ndarray,
                   rows: int, cols: int) -> None:
    """Write an IDX image/label pair (inverse of load_idx_dataset, for fixtures)."""
    count = len(labels)
    pixels = np.clip(np.asarray(images) * 255.0, 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">4i", IDX_IMAGES_MAGIC, count, rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">2i", IDX_LABELS_MAGIC, count))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())
