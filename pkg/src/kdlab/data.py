"""Deterministic synthetic classification tasks plus tabular file ingestion.

Every generator is a pure function of its arguments; identical calls yield
bitwise-identical datasets. Datasets are immutable after construction.
"""

from __future__ import annotations

import math
import random
from array import array
from dataclasses import dataclass

from kdlab.errors import ContractError, ParseError
from kdlab.tensor import Tensor

_MIX_A = 0x9E3779B1
_MIX_B = 0x85EBCA77
_MASK = (1 << 63) - 1


@dataclass(frozen=True)
class Dataset:
    features: Tensor  # [n, d], detached
    labels: array  # 'q', length n
    classes: int
    split: str  # "train" or "test"

    def __post_init__(self):
        n = self.features.shape[0]
        if n < 1:
            raise ContractError("dataset must be nonempty")
        if len(self.labels) != n:
            raise ContractError(f"{len(self.labels)} labels for {n} rows")
        if any(not 0 <= v < self.classes for v in self.labels):
            raise ContractError("label outside class range")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Batch:
    features: Tensor  # [b, d]
    labels: array  # 'q', length b


def _dataset_pair(rows: list[array], labels: list[int], dim: int, classes: int,
                  n_test: int) -> tuple[Dataset, Dataset]:
    """Split per-class-ordered rows into train/test by index partition."""
    n = len(rows)
    n_train = n - n_test
    def build(sel: range, tag: str) -> Dataset:
        flat = array("d")
        lab = array("q")
        for i in sel:
            flat.extend(rows[i])
            lab.append(labels[i])
        return Dataset(Tensor((len(sel), dim), flat), lab, classes, tag)
    return build(range(n_train), "train"), build(range(n_train, n), "test")


def _per_class_split(per_class_rows: list[list[array]], dim: int, classes: int,
                     interleave: bool = False) -> tuple[Dataset, Dataset]:
    """80/20 split applied within each class, keeping splits balanced.

    ``interleave`` sends every fifth sample to the test split instead of the
    trailing block; generators whose samples are ordered (the spiral arms)
    need it so the test split covers the whole range.
    """
    train_rows: list[array] = []
    train_labels: list[int] = []
    test_rows: list[array] = []
    test_labels: list[int] = []
    for c, rows in enumerate(per_class_rows):
        if interleave:
            test_idx = {i for i in range(len(rows)) if i % 5 == 4}
            if not test_idx:
                test_idx = {len(rows) - 1}
        else:
            n_test = max(1, len(rows) // 5)
            test_idx = set(range(len(rows) - n_test, len(rows)))
        for i, r in enumerate(rows):
            if i in test_idx:
                test_rows.append(r)
                test_labels.append(c)
            else:
                train_rows.append(r)
                train_labels.append(c)

    def build(rows: list[array], labels: list[int], tag: str) -> Dataset:
        flat = array("d")
        for r in rows:
            flat.extend(r)
        return Dataset(Tensor((len(rows), dim), flat), array("q", labels), classes, tag)

    return build(train_rows, train_labels, "train"), build(test_rows, test_labels, "test")


def gaussian_mixture(classes: int, dim: int, n_per_class: int, spread: float,
                     seed: int) -> tuple[Dataset, Dataset]:
    """Isotropic Gaussian blobs around class means on the unit sphere."""
    if classes < 2:
        raise ContractError(f"need at least 2 classes, got {classes}")
    if dim < 2:
        raise ContractError(f"need dim >= 2, got {dim}")
    if spread <= 0.0:
        raise ContractError(f"spread must be positive, got {spread}")
    if n_per_class < 2:
        raise ContractError(f"need at least 2 samples per class, got {n_per_class}")
    rng = random.Random(seed)
    means = []
    for _ in range(classes):
        v = [rng.gauss(0.0, 1.0) for _ in range(dim)]
        norm = math.sqrt(sum(x * x for x in v))
        while norm < 1e-12:  # essentially impossible, but stay well-defined
            v = [rng.gauss(0.0, 1.0) for _ in range(dim)]
            norm = math.sqrt(sum(x * x for x in v))
        means.append([x / norm for x in v])
    per_class = []
    for c in range(classes):
        rows = []
        for _ in range(n_per_class):
            rows.append(array("d", (means[c][j] + spread * rng.gauss(0.0, 1.0) for j in range(dim))))
        per_class.append(rows)
    return _per_class_split(per_class, dim, classes)


def mixture_means(classes: int, dim: int, seed: int) -> list[list[float]]:
    """The class means :func:`gaussian_mixture` would place for this seed.

    Consumes the same leading RNG draws, so it reproduces the generator's
    means exactly (used by the nearest-mean oracle in tests).
    """
    rng = random.Random(seed)
    means = []
    for _ in range(classes):
        v = [rng.gauss(0.0, 1.0) for _ in range(dim)]
        norm = math.sqrt(sum(x * x for x in v))
        while norm < 1e-12:
            v = [rng.gauss(0.0, 1.0) for _ in range(dim)]
            norm = math.sqrt(sum(x * x for x in v))
        means.append([x / norm for x in v])
    return means


def spirals(classes: int, n_per_class: int, noise: float, seed: int
            ) -> tuple[Dataset, Dataset]:
    """Interleaved 2-D spiral arms with angular noise."""
    if classes < 2:
        raise ContractError(f"need at least 2 classes, got {classes}")
    if n_per_class < 2:
        raise ContractError(f"need at least 2 samples per class, got {n_per_class}")
    if noise < 0.0:
        raise ContractError(f"noise must be nonnegative, got {noise}")
    rng = random.Random(seed)
    turns = 1.5
    per_class = []
    for c in range(classes):
        rows = []
        for i in range(n_per_class):
            t = (i + 0.5) / n_per_class
            theta = 2.0 * math.pi * (turns * t + c / classes)
            if noise > 0.0:
                theta += noise * rng.gauss(0.0, 1.0)
            rows.append(array("d", (t * math.cos(theta), t * math.sin(theta))))
        per_class.append(rows)
    return _per_class_split(per_class, 2, classes, interleave=True)


def load_tabular(path: str, classes: int) -> Dataset:
    """Parse ``label,feat1,...,featd`` rows and standardize each feature column."""
    if classes < 2:
        raise ContractError(f"need at least 2 classes, got {classes}")
    rows: list[list[float]] = []
    labels: list[int] = []
    width: int | None = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if width is None:
                width = len(parts)
                if width < 2:
                    raise ParseError(f"line {lineno}: need a label and at least one feature")
            elif len(parts) != width:
                raise ParseError(f"line {lineno}: expected {width} fields, got {len(parts)}")
            try:
                label = int(parts[0])
            except ValueError:
                raise ParseError(f"line {lineno}: label {parts[0]!r} is not an integer") from None
            if not 0 <= label < classes:
                raise ParseError(f"line {lineno}: label {label} outside [0, {classes})")
            try:
                feats = [float(p) for p in parts[1:]]
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            labels.append(label)
            rows.append(feats)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    n, d = len(rows), width - 1
    # per-column standardization over the whole file (population stdev)
    for j in range(d):
        mean = math.fsum(r[j] for r in rows) / n
        var = math.fsum((r[j] - mean) ** 2 for r in rows) / n
        std = math.sqrt(var)
        inv = 1.0 / std if std > 0.0 else 1.0
        for r in rows:
            r[j] = (r[j] - mean) * inv
    flat = array("d")
    for r in rows:
        flat.extend(r)
    return Dataset(Tensor((n, d), flat), array("q", labels), classes, "train")


def split_train_test(ds: Dataset, test_fraction: float = 0.2) -> tuple[Dataset, Dataset]:
    """Deterministic index split: the trailing fraction becomes the test set."""
    if not 0.0 < test_fraction < 1.0:
        raise ContractError(f"test_fraction must be in (0,1), got {test_fraction}")
    n_test = max(1, int(round(ds.n * test_fraction)))
    if n_test >= ds.n:
        raise ContractError("dataset too small to split")
    d = ds.dim
    rows = [array("d", ds.features.data[i * d : (i + 1) * d]) for i in range(ds.n)]
    return _dataset_pair(rows, list(ds.labels), d, ds.classes, n_test)


def batch_iter(dataset: Dataset, batch_size: int, seed: int, epoch: int = 0):
    """Seeded per-epoch shuffle, then contiguous chunks covering every sample once."""
    if batch_size < 1:
        raise ContractError(f"batch_size must be positive, got {batch_size}")
    order = list(range(dataset.n))
    mixed = (seed * _MIX_A + epoch * _MIX_B) & _MASK
    random.Random(mixed).shuffle(order)
    d = dataset.dim
    feats = dataset.features.data
    for start in range(0, dataset.n, batch_size):
        chunk = order[start : start + batch_size]
        flat = array("d")
        lab = array("q")
        for i in chunk:
            flat.extend(feats[i * d : (i + 1) * d])
            lab.append(dataset.labels[i])
        yield Batch(Tensor((len(chunk), d), flat), lab)
