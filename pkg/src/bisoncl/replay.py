"""Bounded replay memory with reservoir updating and uniform retrieval.

Every sample offered to the buffer has equal marginal probability of
residing in it (classic reservoir sampling). The buffer also remembers the
distinct label set of the most recently retrieved batch, which the
alignment loss consumes one step later.
"""

from __future__ import annotations

import json

import numpy as np


class MemoryBuffer:
    """Bounded store of (feature vector, label) pairs.

    Single-owner per run. All randomness comes from the Generator passed to
    the mutating calls, so a fixed seed reproduces the full trace bitwise.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._features: list[np.ndarray] = []
        self._labels: list[int] = []
        self.seen_count = 0
        self._prev_batch_labels: tuple = ()

    def __len__(self) -> int:
        return len(self._labels)

    def reservoir_update(self, features: np.ndarray, label: int,
                         rng: np.random.Generator) -> None:
        """Offer one sample: append while under capacity, otherwise replace
        a uniform slot with probability capacity / seen_count."""
        self.seen_count += 1
        feats = np.array(features, dtype=np.float64, copy=True)
        if len(self._labels) < self.capacity:
            self._features.append(feats)
            self._labels.append(int(label))
            return
        j = int(rng.integers(0, self.seen_count))
        if j < self.capacity:
            self._features[j] = feats
            self._labels[j] = int(label)

    def random_retrieve(self, k: int, rng: np.random.Generator):
        """Uniform draw of min(k, len) stored samples without replacement.

        Returns (features (m, d), labels (m,)); both empty when the buffer
        is empty.
        """
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        n = len(self._labels)
        if n == 0:
            return np.empty((0, 0)), np.empty(0, dtype=np.intp)
        m = min(k, n)
        idx = rng.choice(n, size=m, replace=False)
        feats = np.stack([self._features[i] for i in idx])
        labels = np.asarray([self._labels[i] for i in idx], dtype=np.intp)
        return feats, labels

    def remember_labels(self, batch_labels) -> None:
        """Record the distinct labels of the batch just used; overwrites the
        previous record."""
        self._prev_batch_labels = tuple(sorted(set(int(l) for l in batch_labels)))

    def prev_labels(self) -> tuple:
        return self._prev_batch_labels

    def contents(self):
        """Snapshot of all stored samples as (features (n, d), labels (n,))."""
        if not self._labels:
            return np.empty((0, 0)), np.empty(0, dtype=np.intp)
        return np.stack(self._features), np.asarray(self._labels, dtype=np.intp)

    def label_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for l in self._labels:
            counts[l] = counts.get(l, 0) + 1
        return counts

    def dump_jsonl(self, path) -> None:
        """Debug dump: one JSON record per slot (label, feature vector)."""
        with open(path, "w") as fh:
            for feats, label in zip(self._features, self._labels):
                fh.write(json.dumps({"label": int(label),
                                     "features": [float(v) for v in feats]}))
                fh.write("\n")
