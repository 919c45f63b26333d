"""Evaluation metrics for the task-incremental protocol.

An accuracy matrix holds a[k][j]: accuracy on task j's test set after
training task k (0-based, defined for j <= k). From it come average
accuracy, average forgetting, and average intransigence (against per-task
upper bounds). The confusion side computes row-normalized conditional
prediction probabilities, the confusion mass landing on a class's similar
neighbors (SC@1), and the within-pair precision (P_sim).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

ROW_NORM_EPS = 1e-12


@dataclass
class AccuracyMatrix:
    """Lower-triangular accuracy grid plus per-task upper bounds.

    ``rows[k]`` has k+1 entries (tasks 0..k evaluated after training task k).
    """

    rows: list = field(default_factory=list)
    upper_bounds: list = field(default_factory=list)

    def add_row(self, accuracies: Sequence[float]) -> None:
        row = [float(a) for a in accuracies]
        if len(row) != len(self.rows) + 1:
            raise ValueError(
                f"row {len(self.rows)} must have {len(self.rows) + 1} entries, got {len(row)}")
        if any(a < 0 or a > 1 for a in row):
            raise ValueError("accuracies must lie in [0, 1]")
        self.rows.append(row)

    def entry(self, after_task: int, task: int) -> float:
        """a[after_task][task], 0-based, defined for task <= after_task."""
        return self.rows[after_task][task]

    @property
    def num_tasks(self) -> int:
        return len(self.rows)


def average_accuracy(matrix: AccuracyMatrix, k: int) -> float:
    """Mean accuracy over tasks 1..k after training k tasks (k is a 1-based
    count)."""
    if k < 1 or k > matrix.num_tasks:
        raise ValueError(f"k={k} outside completed rows 1..{matrix.num_tasks}")
    row = matrix.rows[k - 1]
    if len(row) != k:
        raise ValueError(f"row {k - 1} incomplete: {len(row)} of {k} entries")
    return float(np.mean(row))


def average_forgetting(matrix: AccuracyMatrix, k: int) -> float:
    """Mean over earlier tasks of the largest accuracy drop from any prior
    evaluation to the current one; needs k >= 2 trained tasks."""
    if k < 2:
        raise ValueError("average_forgetting needs at least 2 trained tasks")
    if k > matrix.num_tasks:
        raise ValueError(f"k={k} outside completed rows 1..{matrix.num_tasks}")
    total = 0.0
    for j in range(k - 1):  # tasks 0..k-2
        best_drop = max(matrix.rows[i][j] - matrix.rows[k - 1][j]
                        for i in range(j, k - 1))  # a[i][j] defined for i >= j
        total += best_drop
    return total / (k - 1)


def average_intransigence(matrix: AccuracyMatrix, k: int) -> float:
    """Mean shortfall of the just-trained accuracy a[j][j] against the
    per-task upper bound."""
    if k < 1 or k > matrix.num_tasks:
        raise ValueError(f"k={k} outside completed rows 1..{matrix.num_tasks}")
    if len(matrix.upper_bounds) < k:
        raise ValueError(f"need {k} upper bounds, have {len(matrix.upper_bounds)}")
    return float(np.mean([matrix.upper_bounds[j] - matrix.rows[j][j] for j in range(k)]))


# ---------------------------------------------------------------------------
# confusion analysis

@dataclass
class ConfusionMatrix:
    """Integer counts[true, predicted] over all dataset classes."""

    counts: np.ndarray

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    def update(self, true_labels, predicted_labels) -> None:
        for t, p in zip(np.asarray(true_labels).ravel(),
                        np.asarray(predicted_labels).ravel()):
            self.counts[int(t), int(p)] += 1

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def row_normalize(counts: np.ndarray, eps: float = ROW_NORM_EPS) -> np.ndarray:
    """Conditional prediction probabilities: counts[c, d] / (row sum + eps)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    counts = np.asarray(counts, dtype=np.float64)
    return counts / (counts.sum(axis=1, keepdims=True) + eps)


class SimilarPairs:
    """Symmetric similar-neighbor map built from class pairs."""

    def __init__(self, pairs: Sequence[Sequence[int]]):
        neighbors: dict[int, set] = {}
        for a, b in pairs:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError(f"class {a} cannot neighbor itself")
            neighbors.setdefault(a, set()).add(b)
            neighbors.setdefault(b, set()).add(a)
        self._neighbors = neighbors

    def neighbors(self, c: int) -> frozenset:
        return frozenset(self._neighbors.get(int(c), frozenset()))


def sc_at_1(m_row: np.ndarray, pairs: SimilarPairs, c: int) -> float:
    """Similar-confusion at top-1: row-normalized prediction mass of class c
    that lands on its similar neighbors."""
    return float(sum(m_row[c, d] for d in pairs.neighbors(c)))


def p_sim(m_row: np.ndarray, pairs: SimilarPairs, c: int) -> Optional[float]:
    """Within-pair precision: correct mass over correct-plus-neighbor mass.
    None when the denominator is zero (undefined, not 0)."""
    neighbor_mass = sum(m_row[c, d] for d in pairs.neighbors(c))
    denom = m_row[c, c] + neighbor_mass
    if denom == 0:
        return None
    return float(m_row[c, c] / denom)


# ---------------------------------------------------------------------------
# serialization

def accuracy_matrix_to_csv(matrix: AccuracyMatrix, path) -> None:
    """Rows are 'after task k'; undefined upper-triangle cells stay blank.
    A final row carries the upper bounds when present."""
    t = matrix.num_tasks
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["after_task"] + [f"task_{j}" for j in range(t)])
        for k, row in enumerate(matrix.rows):
            writer.writerow([k] + [repr(v) for v in row] + [""] * (t - len(row)))
        if matrix.upper_bounds:
            writer.writerow(["upper_bound"] + [repr(v) for v in matrix.upper_bounds]
                            + [""] * (t - len(matrix.upper_bounds)))


def accuracy_matrix_from_csv(path) -> AccuracyMatrix:
    matrix = AccuracyMatrix()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)  # header
        for row in reader:
            values = [float(v) for v in row[1:] if v != ""]
            if row[0] == "upper_bound":
                matrix.upper_bounds = values
            else:
                matrix.add_row(values)
    return matrix


def confusion_to_csv(confusion: ConfusionMatrix, path) -> None:
    c = confusion.counts.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred"] + [f"class_{d}" for d in range(c)])
        for t in range(c):
            writer.writerow([f"class_{t}"] + [int(v) for v in confusion.counts[t]])


def confusion_from_csv(path) -> ConfusionMatrix:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            rows.append([int(v) for v in row[1:]])
    return ConfusionMatrix(np.asarray(rows, dtype=np.int64))
