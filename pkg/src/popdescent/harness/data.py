"""Datasets: IDX files (Fashion-MNIST), synthetic 2-D problems, seeded splits.

The held-out test partition is only reachable through :class:`GuardedTest`,
which refuses a second evaluation for the same (method, seed) key.
"""
from __future__ import annotations

import gzip
import math
import os
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Hashable, Sequence

import numpy as np

from ..errors import DomainError, IdxFormatError, TestSetAccessError
from ..individual import Batch

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_DIR_ENV = "POPDESCENT_DATA_DIR"

FMNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    n_classes: int
    name: str = ""
    sample_shape: tuple[int, ...] = ()

    def __post_init__(self):
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise DomainError("inputs and targets differ in length")
        if not self.sample_shape:
            self.sample_shape = self.inputs.shape[1:]

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def n_features(self) -> int:
        return int(np.prod(self.inputs.shape[1:]))

    def subset(self, idx) -> Dataset:
        return Dataset(self.inputs[idx], self.targets[idx], self.n_classes, self.name, self.sample_shape)


def _read(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, expected_magic: int, what: str) -> np.ndarray:
    if len(raw) < 4:
        raise IdxFormatError(f"{what} file too short for a magic number", 0)
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != expected_magic:
        raise IdxFormatError(f"{what} file has magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{what} header truncated", len(raw))
    dims = struct.unpack_from(">" + "I" * ndim, raw, 4)
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise IdxFormatError(f"{what} payload truncated: need {count} bytes, have {len(raw) - header}", len(raw))
    if len(raw) - header > count:
        raise IdxFormatError(f"{what} file has {len(raw) - header - count} trailing bytes", header + count)
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair (optionally gzipped). Pixels are scaled to [0, 1]."""
    images = _parse_idx(_read(images_path), IMAGES_MAGIC, "images")
    labels = _parse_idx(_read(labels_path), LABELS_MAGIC, "labels")
    if images.shape[0] != labels.shape[0]:
        # offset 4 is where both files store their item count
        raise IdxFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels", 4)
    inputs = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    targets = labels.astype(np.int64)
    n_classes = int(targets.max()) + 1 if targets.size else 0
    return Dataset(inputs, targets, max(n_classes, 10), "idx", tuple(images.shape[1:]))


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", IMAGES_MAGIC))
        fh.write(struct.pack(">" + "I" * images.ndim, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def find_fmnist(data_dir) -> dict[str, tuple[Path, Path]] | None:
    """Locate the four Fashion-MNIST files (plain or ``.gz``); ``None`` if any is missing."""
    if not data_dir:
        return None
    root = Path(data_dir)
    found = {}
    for part, names in FMNIST_FILES.items():
        paths = []
        for name in names:
            for candidate in (root / name, root / (name + ".gz")):
                if candidate.exists():
                    paths.append(candidate)
                    break
            else:
                return None
        found[part] = tuple(paths)
    return found


def resolve_data_dir(explicit: str | None) -> str | None:
    return explicit or os.environ.get(DATA_DIR_ENV) or None


def make_synthetic(kind: str, n: int, noise: float, rng: np.random.Generator) -> Dataset:
    """Two-class 2-D data.

    ``two_moons``: interleaved half circles. ``blobs``: two unit discs centred
    at (-1.5, 0) and (1.5, 0), separable by a margin of 1 when ``noise == 0``.
    Gaussian noise with standard deviation ``noise`` is added to every point.
    """
    if n < 4:
        raise DomainError("synthetic datasets need n >= 4")
    n0 = n // 2
    n1 = n - n0
    if kind == "two_moons":
        t0 = np.linspace(0.0, math.pi, n0)
        t1 = np.linspace(0.0, math.pi, n1)
        x0 = np.stack([np.cos(t0), np.sin(t0)], axis=1)
        x1 = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    elif kind == "blobs":
        def disc(k, cx):
            r = np.sqrt(rng.uniform(0.0, 1.0, k))
            a = rng.uniform(0.0, 2 * math.pi, k)
            return np.stack([cx + r * np.cos(a), r * np.sin(a)], axis=1)
        x0 = disc(n0, -1.5)
        x1 = disc(n1, 1.5)
    else:
        raise DomainError(f"unknown synthetic dataset {kind!r}")
    inputs = np.concatenate([x0, x1])
    targets = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    if noise > 0:
        inputs = inputs + rng.normal(0.0, noise, size=inputs.shape)
    order = rng.permutation(n)
    return Dataset(inputs[order], targets[order], 2, kind)


class GuardedTest:
    """Held-out partition that permits exactly one evaluation per key."""

    def __init__(self, batch: Batch):
        self._batch = batch
        self.accesses: Counter = Counter()

    def __len__(self) -> int:
        return self._batch.size

    def evaluate(self, key: Hashable, fn: Callable[[Batch], float]):
        if self.accesses[key] >= 1:
            self.accesses[key] += 1
            raise TestSetAccessError(f"test partition accessed more than once for {key!r}")
        self.accesses[key] += 1
        return fn(self._batch)

    def verify(self, keys) -> None:
        keys = set(keys)
        for key in keys:
            if self.accesses[key] != 1:
                raise TestSetAccessError(f"{key!r} evaluated the test partition {self.accesses[key]} times")
        extra = [k for k in self.accesses if k not in keys]
        if extra:
            raise TestSetAccessError(f"unexpected test-partition access by {extra!r}")


@dataclass
class DatasetSplit:
    train: Dataset
    cv: Dataset
    test: GuardedTest
    n_classes: int
    n_features: int


def split_indices(n: int, fractions: Sequence[float], rng: np.random.Generator) -> list[np.ndarray]:
    if any(f <= 0 for f in fractions):
        raise DomainError("split fractions must be positive")
    if sum(fractions) > 1 + 1e-12:
        raise DomainError(f"split fractions sum to {sum(fractions)} > 1")
    sizes = [int(math.floor(f * n + 1e-9)) for f in fractions]
    order = rng.permutation(n)
    parts, start = [], 0
    for size in sizes:
        parts.append(order[start:start + size])
        start += size
    return parts


def split(
    dataset: Dataset,
    fractions: Sequence[float],
    rng: np.random.Generator,
    train_cap: int | None = None,
) -> DatasetSplit:
    """Disjoint shuffled train / CV / test partitions; ``train_cap`` trims the train part."""
    if len(fractions) != 3:
        raise DomainError("split needs (train, cv, test) fractions")
    train_idx, cv_idx, test_idx = split_indices(len(dataset), fractions, rng)
    if train_cap is not None:
        train_idx = train_idx[:train_cap]
    test = dataset.subset(test_idx)
    return DatasetSplit(
        dataset.subset(train_idx),
        dataset.subset(cv_idx),
        GuardedTest(Batch(test.inputs, test.targets)),
        dataset.n_classes,
        dataset.n_features,
    )


def split_fmnist(train: Dataset, test: Dataset, rng: np.random.Generator, train_cap: int, cv_size: int) -> DatasetSplit:
    """Train and CV come from the shuffled training file; the test file stays held out."""
    if train_cap + cv_size > len(train):
        raise DomainError("train_cap + cv_size exceeds the training file")
    order = rng.permutation(len(train))
    return DatasetSplit(
        train.subset(order[:train_cap]),
        train.subset(order[train_cap:train_cap + cv_size]),
        GuardedTest(Batch(test.inputs, test.targets)),
        train.n_classes,
        train.n_features,
    )
