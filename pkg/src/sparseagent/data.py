"""Datasets, minibatches and the built-in synthetic generators."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import RngStream


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray  # [n, d]
    labels: np.ndarray  # [n] int
    sample_ids: np.ndarray  # [n] int, unique within the batch

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] != len(self.labels):
            raise ValueError("inputs must be [n, d] with one label per row")
        if len(self.sample_ids) != len(self.labels):
            raise ValueError("one sample id per example")
        if len(np.unique(self.sample_ids)) != len(self.sample_ids):
            raise ValueError("sample ids must be unique within a batch")

    def __len__(self):
        return len(self.labels)

    def with_inputs(self, inputs) -> "Batch":
        return Batch(np.asarray(inputs, dtype=np.float64), self.labels, self.sample_ids)


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.inputs.ndim != 2 or len(self.inputs) != len(self.labels):
            raise ValueError("inputs must be [N, d] with one label per row")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def batch(self, ids) -> Batch:
        ids = np.asarray(ids, dtype=np.int64)
        return Batch(self.inputs[ids], self.labels[ids], ids)

    def as_batch(self) -> Batch:
        return self.batch(np.arange(len(self)))

    def subset(self, ids) -> "Dataset":
        ids = np.asarray(ids, dtype=np.int64)
        return Dataset(self.inputs[ids], self.labels[ids], self.n_classes)

    def batches(self, batch_size: int, rng: RngStream | None = None):
        """Disjoint minibatches covering the dataset once.

        With ``rng`` the order is a fresh permutation; without it batches are
        consecutive slices. The last batch may be smaller.
        """
        order = rng.permutation(len(self)) if rng is not None else np.arange(len(self))
        for start in range(0, len(self), batch_size):
            yield self.batch(order[start : start + batch_size])

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs).astype("<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels).astype("<i8").tobytes())
        h.update(str(self.n_classes).encode())
        return h.hexdigest()[:16]


def make_blobs(
    n_samples: int,
    n_classes: int,
    dim: int,
    separation: float = 3.0,
    seed: int = 0,
    n_test: int = 0,
    label_noise: float = 0.0,
) -> tuple[Dataset, Dataset | None]:
    """Isotropic Gaussian clusters, one per class, rescaled into ``[0, 1]``.

    Class centres are drawn as ``separation * N(0, I)``; points are centre plus
    unit noise. Train and test share centres and the same min-max rescaling.
    ``label_noise`` relabels that fraction of points uniformly at random.
    """
    rng = RngStream(seed, stream=0x0B10B5)
    centres = rng.gaussian((n_classes, dim), std=separation)
    total = n_samples + n_test
    labels = np.arange(total) % n_classes
    labels = labels[rng.permutation(total)]
    x = centres[labels] + rng.gaussian((total, dim))
    if label_noise > 0:
        flip = rng.uniform(total) < label_noise
        noisy = np.minimum((rng.uniform(total) * n_classes).astype(np.int64), n_classes - 1)
        labels = np.where(flip, noisy, labels)
    lo = x[:n_samples].min(axis=0)
    span = x[:n_samples].max(axis=0) - lo
    span[span == 0] = 1.0
    x = np.clip((x - lo) / span, 0.0, 1.0)
    train = Dataset(x[:n_samples], labels[:n_samples], n_classes)
    test = Dataset(x[n_samples:], labels[n_samples:], n_classes) if n_test else None
    return train, test


def load_csv(path, n_classes: int | None = None) -> Dataset:
    """Read ``d`` feature columns followed by one integer label column.

    A header row is skipped when its first field is not numeric.
    """
    path = Path(path)
    with path.open() as fh:
        first = fh.readline().split(",")[0].strip()
    try:
        float(first)
        skip = 0
    except ValueError:
        skip = 1
    table = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    if table.shape[1] < 2:
        raise ValueError(f"{path}: need at least one feature column and a label column")
    labels = table[:, -1]
    if not np.all(labels == np.round(labels)):
        raise ValueError(f"{path}: label column must hold integers")
    labels = labels.astype(np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    return Dataset(table[:, :-1], labels, n_classes)


def save_csv(dataset: Dataset, path):
    table = np.column_stack([dataset.inputs, dataset.labels.astype(np.float64)])
    fmt = ["%.17g"] * dataset.dim + ["%d"]
    np.savetxt(path, table, delimiter=",", fmt=fmt)


def load_digits() -> tuple[Dataset, Dataset]:
    """The 8x8 handwritten digits bundled with scikit-learn, scaled to ``[0, 1]``.

    Split deterministically: every fifth image goes to the test set.
    """
    from sklearn.datasets import load_digits as _load

    bunch = _load()
    x = bunch.data / 16.0
    y = bunch.target
    test = np.arange(len(y)) % 5 == 0
    return Dataset(x[~test], y[~test], 10), Dataset(x[test], y[test], 10)


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    order = RngStream(seed, stream=0x5B117).permutation(len(dataset))
    n_test = int(round(test_fraction * len(dataset)))
    return dataset.subset(np.sort(order[n_test:])), dataset.subset(np.sort(order[:n_test]))
