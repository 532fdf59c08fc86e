"""Dataset ingestion, splitting, and non-IID client partitioning.

Images are kept as float64 rows scaled to [0, 1]; labels as small ints.
The IDX reader/writer speaks the standard big-endian format used by the
FMNIST distribution (magic 0x00000803 for images, 0x00000801 for labels).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError, ParseError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Feature rows plus integer labels; rows and labels align by index."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 2:
            raise InputError(f"images must be 2-D, got shape {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise InputError(
                f"{self.images.shape[0]} images vs {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, indices) -> "Dataset":
        return Dataset(self.images[indices], self.labels[indices])


@dataclass(frozen=True)
class PartitionSpec:
    """Dirichlet non-IID partition of a dataset across clients."""

    num_clients: int
    dirichlet_alpha: float = 2.0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError(f"num_clients must be >= 1, got {self.num_clients}")
        if self.dirichlet_alpha <= 0:
            raise ConfigError(
                f"dirichlet_alpha must be > 0, got {self.dirichlet_alpha}"
            )


def _read_header(raw: bytes, path, expected_magic: int, n_dims: int, kind: str):
    header_len = 4 * (1 + n_dims)
    if len(raw) < header_len:
        raise ParseError(
            f"{path}: truncated header, {len(raw)} bytes < {header_len} (field: header)"
        )
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise ParseError(
            f"{path}: magic 0x{magic:08x} at byte offset 0 is not the {kind} "
            f"magic 0x{expected_magic:08x} (field: magic)"
        )
    dims = struct.unpack(">" + "I" * n_dims, raw[4:header_len])
    return dims, header_len


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label file pair into a Dataset.

    Pixels are flattened row-major and scaled by 1/255.
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    raw_img = images_path.read_bytes()
    raw_lab = labels_path.read_bytes()

    (n_img, rows, cols), img_off = _read_header(
        raw_img, images_path, IDX_IMAGES_MAGIC, 3, "images"
    )
    (n_lab,), lab_off = _read_header(raw_lab, labels_path, IDX_LABELS_MAGIC, 1, "labels")

    expected = n_img * rows * cols
    if len(raw_img) - img_off != expected:
        raise ParseError(
            f"{images_path}: expected {expected} pixel bytes after offset {img_off}, "
            f"found {len(raw_img) - img_off} (field: pixel data)"
        )
    if len(raw_lab) - lab_off != n_lab:
        raise ParseError(
            f"{labels_path}: expected {n_lab} label bytes after offset {lab_off}, "
            f"found {len(raw_lab) - lab_off} (field: label data)"
        )
    if n_img != n_lab:
        raise ParseError(
            f"image count {n_img} ({images_path}) does not match label count "
            f"{n_lab} ({labels_path}) (field: item count)"
        )

    images = np.frombuffer(raw_img, dtype=np.uint8, offset=img_off)
    images = images.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(raw_lab, dtype=np.uint8, offset=lab_off).astype(np.int64)
    return Dataset(images, labels)


def write_idx(dataset: Dataset, images_path, labels_path, rows: int, cols: int) -> None:
    """Write a Dataset back to an IDX pair (inverse of load_idx, for fixtures)."""
    n = len(dataset)
    if rows * cols != dataset.images.shape[1]:
        raise InputError(
            f"rows*cols = {rows * cols} does not match feature dim "
            f"{dataset.images.shape[1]}"
        )
    pixels = np.round(dataset.images * 255.0).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def split(
    ds: Dataset,
    ratios: tuple[float, float, float],
    rng: np.random.Generator,
) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint shuffled train/validation/test split.

    Sizes are floor-allocated from the ratios; the remainder goes to train.
    """
    if len(ds) == 0:
        raise InputError("cannot split an empty dataset")
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise InputError(f"ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise InputError(f"ratios must sum to 1, got {sum(ratios)}")
    n = len(ds)
    n_val = int(n * ratios[1])
    n_test = int(n * ratios[2])
    n_train = n - n_val - n_test
    order = rng.permutation(n)
    return (
        ds.subset(order[:n_train]),
        ds.subset(order[n_train:n_train + n_val]),
        ds.subset(order[n_train + n_val:]),
    )


def dirichlet_partition(
    ds: Dataset, spec: PartitionSpec, rng: np.random.Generator
) -> list[Dataset]:
    """Split a dataset into per-client shards, heterogeneous across classes.

    For each class a client-proportion vector is drawn from a symmetric
    Dirichlet; the class's samples are then assigned multinomially. Every
    sample lands in exactly one shard; shards may be empty.
    """
    k = spec.num_clients
    assigned = [[] for _ in range(k)]
    for cls in np.unique(ds.labels):
        cls_idx = np.flatnonzero(ds.labels == cls)
        cls_idx = rng.permutation(cls_idx)
        props = rng.dirichlet(np.full(k, spec.dirichlet_alpha))
        counts = rng.multinomial(len(cls_idx), props)
        start = 0
        for client, count in enumerate(counts):
            assigned[client].extend(cls_idx[start:start + count])
            start += count
    return [ds.subset(np.sort(np.array(idx, dtype=np.int64))) for idx in assigned]


def synthetic_dataset(
    n: int,
    classes: int,
    dim: int,
    separation: float,
    rng: np.random.Generator,
) -> Dataset:
    """Gaussian blobs for fast tests: unit-variance, well-scaled clusters.

    When dim >= classes each class mean sits at separation/sqrt(2) along
    its own axis (pairwise distances exactly `separation`); otherwise the
    means fall back to a line along the first axis with `separation`
    spacing. Labels are assigned round-robin, so class counts differ by
    at most one. Means are centered so feature magnitudes stay modest.
    """
    if n < 1 or classes < 1 or dim < 1:
        raise InputError(
            f"n, classes, dim must all be >= 1, got {(n, classes, dim)}"
        )
    labels = np.arange(n) % classes
    means = np.zeros((classes, dim))
    if classes <= dim:
        means[np.arange(classes), np.arange(classes)] = separation / np.sqrt(2.0)
    else:
        means[:, 0] = np.arange(classes) * separation
    means -= means.mean(axis=0)
    images = means[labels] + rng.normal(0.0, 1.0, (n, dim))
    order = rng.permutation(n)
    return Dataset(images[order], labels[order])
