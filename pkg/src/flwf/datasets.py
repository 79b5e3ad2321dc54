"""Labeled example pools: synthetic generation, CSV ingestion, round draws.

A :class:`DatasetPool` owns every example available to an experiment and a
consumption flag per example.  Round draws and the test draw mark what they
take, so no example is ever used by two (client, round) pairs or shared
between training and the test set.  All draws are seeded and deterministic.

Tensors everywhere are plain float64 numpy arrays; labels are integer class
ids in ``[0, n_classes)``.
"""

import csv
from dataclasses import dataclass, field

import numpy as np


class PoolExhaustedError(ValueError):
    """Raised when a draw asks for more unconsumed examples than remain."""


@dataclass(frozen=True)
class Example:
    """One labeled example."""

    features: np.ndarray
    label: int


@dataclass
class RoundBatch:
    """The labeled data one client trains on in one round.

    ``source_indices`` maps each row back to its pool index; replayed
    exemplar rows carry -1 since their pool slot was consumed in an
    earlier round.
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    source_indices: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels disagree in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("label out of range")
        if self.source_indices is None:
            self.source_indices = np.full(len(self.labels), -1, dtype=int)

    def __len__(self) -> int:
        return len(self.labels)

    def one_hot(self) -> np.ndarray:
        out = np.zeros((len(self.labels), self.n_classes))
        out[np.arange(len(self.labels)), self.labels] = 1.0
        return out

    def permuted(self, order: np.ndarray) -> "RoundBatch":
        return RoundBatch(self.features[order], self.labels[order], self.n_classes,
                          self.source_indices[order])


@dataclass
class TestSet:
    """Fixed class-balanced evaluation set, shared by every model."""

    __test__ = False  # not a pytest case despite the name

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class DatasetPool:
    """All examples available to one experiment, with consumption tracking."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    consumed: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.consumed is None:
            self.consumed = np.zeros(len(self.labels), dtype=bool)

    def __len__(self) -> int:
        return len(self.labels)

    def example(self, index: int) -> Example:
        return Example(self.features[index].copy(), int(self.labels[index]))

    def remaining(self, class_id: int) -> int:
        return int(np.count_nonzero(~self.consumed & (self.labels == class_id)))


def generate_synthetic(n_classes: int, per_class: int, feature_dim: int,
                       separation: float, seed) -> DatasetPool:
    """Gaussian class clusters with unit noise.

    Each class is centered on a seeded random unit-norm direction scaled by
    ``separation`` (the separation is therefore expressed in units of the
    within-class standard deviation).
    """
    if n_classes < 2 or per_class < 1 or feature_dim < 1:
        raise ValueError("n_classes, per_class and feature_dim must be positive")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_classes, feature_dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    centers *= separation
    labels = np.repeat(np.arange(n_classes), per_class)
    noise = rng.standard_normal((len(labels), feature_dim))
    return DatasetPool(centers[labels] + noise, labels, n_classes)


def _looks_numeric(row: list[str]) -> bool:
    try:
        for cell in row:
            float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, n_classes: int = 6) -> DatasetPool:
    """Load a pool from CSV rows of F feature columns followed by an integer label.

    A non-numeric first row is treated as a header.  Ragged rows, non-numeric
    features and out-of-range labels are rejected with their line number.
    """
    features: list[list[float]] = []
    labels: list[int] = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if lineno == 1 and not _looks_numeric(row):
                continue  # header
            if width is None:
                width = len(row)
                if width < 2:
                    raise ValueError(f"{path}: line {lineno}: need at least one feature and a label")
            elif len(row) != width:
                raise ValueError(f"{path}: line {lineno}: expected {width} columns, got {len(row)}")
            try:
                values = [float(cell) for cell in row[:-1]]
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: non-numeric feature") from None
            try:
                label_value = float(row[-1])
                label = int(label_value)
                if label != label_value:
                    raise ValueError
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: non-integer label") from None
            if not 0 <= label < n_classes:
                raise ValueError(
                    f"{path}: line {lineno}: label {label} outside [0, {n_classes})")
            features.append(values)
            labels.append(label)
    if not features:
        raise ValueError(f"{path}: no data rows")
    return DatasetPool(np.array(features, dtype=float), np.array(labels, dtype=int), n_classes)


def save_csv(pool: DatasetPool, path) -> None:
    """Companion writer; ``load_csv(save_csv(pool))`` reproduces the pool exactly."""
    n_features = pool.features.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(n_features)] + ["label"])
        for row, label in zip(pool.features, pool.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def _allocate_per_class(classes: list[int], size: int) -> dict[int, int]:
    # Remainder goes to the lexicographically smallest classes.
    base, rem = divmod(size, len(classes))
    ordered = sorted(classes)
    return {c: base + (1 if i < rem else 0) for i, c in enumerate(ordered)}


def draw_round_data(pool: DatasetPool, classes, size: int, seed) -> RoundBatch:
    """Draw ``size`` unconsumed examples from the given classes, without replacement.

    Class proportions are as uniform as integer division allows.  Drawn
    examples are marked consumed, so later draws and the test set stay
    disjoint from this batch.
    """
    classes = sorted(int(c) for c in set(classes))
    if not classes:
        raise ValueError("class set must be nonempty")
    if size < 1:
        raise ValueError("size must be positive")
    rng = np.random.default_rng(seed)
    wanted = _allocate_per_class(classes, size)
    picks = []
    for c in classes:
        want = wanted[c]
        if want == 0:
            continue
        candidates = np.flatnonzero(~pool.consumed & (pool.labels == c))
        if len(candidates) < want:
            raise PoolExhaustedError(
                f"class {c}: need {want} unconsumed examples, only {len(candidates)} left")
        picks.append(rng.choice(candidates, size=want, replace=False))
    chosen = np.concatenate(picks)
    chosen = chosen[rng.permutation(len(chosen))]
    pool.consumed[chosen] = True
    return RoundBatch(pool.features[chosen].copy(), pool.labels[chosen].copy(),
                      pool.n_classes, chosen.copy())


def draw_test_set(pool: DatasetPool, per_class: int, seed) -> TestSet:
    """Draw the fixed balanced test set (``per_class`` examples of every class)."""
    batch = draw_round_data(pool, range(pool.n_classes), per_class * pool.n_classes, seed)
    order = np.lexsort((batch.source_indices, batch.labels))
    return TestSet(batch.features[order], batch.labels[order], pool.n_classes)
