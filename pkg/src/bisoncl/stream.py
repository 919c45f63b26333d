"""Task construction, single-pass stream batching, augmentation, loaders.

A dataset is split into class-disjoint tasks of equal class count. The
stream cursor emits each training sample in exactly one batch across the
run and flags task boundaries so the trainer can reset per-task state and
run its inference pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int

    @property
    def feature_dim(self) -> int:
        return self.train_x.shape[1]


@dataclass
class Task:
    index: int
    classes: tuple
    train_x: np.ndarray
    train_y: np.ndarray
    train_ids: np.ndarray  # row indices into the source dataset
    test_x: np.ndarray
    test_y: np.ndarray


@dataclass
class StreamBatch:
    task_index: int
    task_start: bool  # first batch of a task
    x: np.ndarray
    y: np.ndarray
    ids: np.ndarray


class TaskStream:
    """Ordered tasks with a single-pass batch cursor.

    ``next_batch`` yields up to ``batch_size`` samples, advancing through
    tasks in order; after exhaustion it returns None forever (until
    ``reset``).
    """

    def __init__(self, tasks: list[Task], batch_size: int = 10):
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        self.tasks = tasks
        self.batch_size = batch_size
        self._task_i = 0
        self._offset = 0

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def seen_classes(self, upto_task: int) -> list[int]:
        """All class ids of tasks 0..upto_task inclusive."""
        out: list[int] = []
        for t in self.tasks[:upto_task + 1]:
            out.extend(t.classes)
        return sorted(out)

    def reset(self) -> None:
        self._task_i = 0
        self._offset = 0

    def next_batch(self) -> Optional[StreamBatch]:
        while self._task_i < len(self.tasks):
            task = self.tasks[self._task_i]
            n = task.train_x.shape[0]
            if self._offset >= n:
                self._task_i += 1
                self._offset = 0
                continue
            start = self._offset
            end = min(start + self.batch_size, n)
            self._offset = end
            return StreamBatch(
                task_index=task.index,
                task_start=(start == 0),
                x=task.train_x[start:end],
                y=task.train_y[start:end],
                ids=task.train_ids[start:end])
        return None


def build_task_stream(dataset: Dataset, num_tasks: int, classes_per_task: int,
                      class_order_seed: int, sample_order_seed: int,
                      batch_size: int = 10,
                      fixed_class_order: Optional[Sequence[Sequence[int]]] = None
                      ) -> TaskStream:
    """Partition classes into disjoint equal-size tasks and build the stream.

    Default mode shuffles the class-to-task assignment by
    ``class_order_seed``; ``fixed_class_order`` overrides it with an explicit
    per-task class schedule (used by the confusion protocol). Within-task
    sample order is shuffled by ``sample_order_seed``.
    """
    if num_tasks * classes_per_task > dataset.num_classes:
        raise ValueError(
            f"need {num_tasks * classes_per_task} classes, dataset has {dataset.num_classes}")
    if fixed_class_order is not None:
        schedule = [tuple(int(c) for c in task) for task in fixed_class_order]
        if len(schedule) != num_tasks or any(len(t) != classes_per_task for t in schedule):
            raise ValueError("fixed_class_order does not match num_tasks x classes_per_task")
        flat = [c for t in schedule for c in t]
        if len(set(flat)) != len(flat):
            raise ValueError("fixed_class_order repeats a class")
        if min(flat) < 0 or max(flat) >= dataset.num_classes:
            raise ValueError("fixed_class_order contains out-of-range classes")
    else:
        order_rng = np.random.default_rng(class_order_seed)
        order = order_rng.permutation(dataset.num_classes)[:num_tasks * classes_per_task]
        schedule = [tuple(int(c) for c in order[i * classes_per_task:(i + 1) * classes_per_task])
                    for i in range(num_tasks)]

    sample_rng = np.random.default_rng(sample_order_seed)
    tasks = []
    for i, classes in enumerate(schedule):
        train_sel = np.flatnonzero(np.isin(dataset.train_y, classes))
        perm = sample_rng.permutation(train_sel.size)
        train_sel = train_sel[perm]
        test_sel = np.flatnonzero(np.isin(dataset.test_y, classes))
        tasks.append(Task(
            index=i,
            classes=tuple(sorted(classes)),
            train_x=dataset.train_x[train_sel],
            train_y=dataset.train_y[train_sel],
            train_ids=train_sel,
            test_x=dataset.test_x[test_sel],
            test_y=dataset.test_y[test_sel]))
    return TaskStream(tasks, batch_size=batch_size)


# ---------------------------------------------------------------------------
# augmentation

@dataclass
class AugmentPolicy:
    """Augmentation policy: 'none', 'vector-noise', or 'image-basic'.

    vector-noise adds N(0, sigma^2) and independently zeroes each coordinate
    with probability zero_prob. image-basic does a pad-4 random crop plus a
    coin-flip horizontal flip on flattened (H, W, 3) images.
    """

    kind: str = "none"
    sigma: float = 0.05
    zero_prob: float = 0.1
    image_hw: tuple = (32, 32)
    pad: int = 4

    def __post_init__(self):
        if self.kind not in ("none", "vector-noise", "image-basic"):
            raise ValueError(f"unknown augmentation policy {self.kind!r}")


def hflip_image(flat: np.ndarray, hw: tuple) -> np.ndarray:
    h, w = hw
    return flat.reshape(h, w, 3)[:, ::-1, :].reshape(-1).copy()


def pad_crop_image(flat: np.ndarray, hw: tuple, pad: int, top: int, left: int) -> np.ndarray:
    h, w = hw
    img = flat.reshape(h, w, 3)
    padded = np.zeros((h + 2 * pad, w + 2 * pad, 3))
    padded[pad:pad + h, pad:pad + w, :] = img
    return padded[top:top + h, left:left + w, :].reshape(-1).copy()


def augment(batch_x: np.ndarray, policy: AugmentPolicy,
            rng: np.random.Generator) -> np.ndarray:
    """Augmented copies of a batch; the input is never mutated."""
    if policy.kind == "none":
        return batch_x.copy()
    if policy.kind == "vector-noise":
        out = batch_x + rng.normal(0.0, policy.sigma, size=batch_x.shape)
        keep = rng.random(batch_x.shape) >= policy.zero_prob
        return out * keep
    # image-basic
    h, w = policy.image_hw
    if batch_x.shape[1] != h * w * 3:
        raise ValueError(
            f"image-basic expects {h}x{w}x3 = {h * w * 3} features, got {batch_x.shape[1]}")
    out = np.empty_like(batch_x)
    for i in range(batch_x.shape[0]):
        top = int(rng.integers(0, 2 * policy.pad + 1))
        left = int(rng.integers(0, 2 * policy.pad + 1))
        img = pad_crop_image(batch_x[i], (h, w), policy.pad, top, left)
        if rng.random() < 0.5:
            img = hflip_image(img, (h, w))
        out[i] = img
    return out


def with_augmented(x: np.ndarray, y: np.ndarray, policy: AugmentPolicy,
                   rng: np.random.Generator):
    """Originals concatenated with one augmented copy each (labels doubled).
    Policy 'none' returns the batch unchanged."""
    if policy.kind == "none":
        return x, y
    aug = augment(x, policy, rng)
    return np.concatenate([x, aug], axis=0), np.concatenate([y, y])


# ---------------------------------------------------------------------------
# CIFAR binary loader
#
# Standard distribution binaries: each record is 1 label byte (CIFAR-10) or
# coarse+fine label bytes (CIFAR-100) followed by 3072 pixel bytes stored as
# full R, G, B planes. Features come out as flattened (32, 32, 3) arrays
# scaled to [0, 1] so the image augmentations see spatial layout.

_CIFAR10_RECORD = 3073
_CIFAR100_RECORD = 3074

CIFAR10_CLASS_NAMES = ("airplane", "automobile", "bird", "cat", "deer",
                       "dog", "frog", "horse", "ship", "truck")

# confusion-protocol schedule: members of each similar pair land in
# different tasks, introduced as {cat, deer}, {dog, automobile},
# {horse, airplane}, {truck, bird}, {ship, frog}
CIFAR10_CONFUSION_SCHEDULE = ((3, 4), (5, 1), (7, 0), (9, 2), (8, 6))
CIFAR10_SIMILAR_PAIRS = ((3, 5), (4, 7), (1, 9), (0, 8), (2, 6))


def load_cifar_binary(path, fmt: str = "auto"):
    """Parse one CIFAR binary batch file into (features (n, 3072), labels).

    ``fmt`` is 'cifar10', 'cifar100', or 'auto' (decided by record size,
    preferring CIFAR-10 in the rare ambiguous case).
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    n = len(raw)
    if fmt == "auto":
        if n % _CIFAR10_RECORD == 0:
            fmt = "cifar10"
        elif n % _CIFAR100_RECORD == 0:
            fmt = "cifar100"
        else:
            offset = n - (n % _CIFAR10_RECORD)
            raise ValueError(
                f"{path}: {n} bytes is not a whole number of CIFAR records "
                f"(trailing partial record at byte offset {offset})")
    record = _CIFAR10_RECORD if fmt == "cifar10" else _CIFAR100_RECORD
    if n % record != 0:
        offset = n - (n % record)
        raise ValueError(
            f"{path}: {n} bytes is not a multiple of {record} "
            f"(trailing partial record at byte offset {offset})")
    count = n // record
    data = np.frombuffer(raw, dtype=np.uint8).reshape(count, record)
    if fmt == "cifar10":
        labels = data[:, 0].astype(np.intp)
        if labels.size and labels.max() >= 10:
            raise ValueError(f"{path}: label byte {labels.max()} out of range for CIFAR-10")
        pixels = data[:, 1:]
    else:
        labels = data[:, 1].astype(np.intp)  # fine label
        pixels = data[:, 2:]
    # planes (3, 32, 32) -> interleaved (32, 32, 3), flattened
    imgs = pixels.reshape(count, 3, 32, 32).transpose(0, 2, 3, 1)
    feats = imgs.reshape(count, 3072).astype(np.float64) / 255.0
    return feats, labels


def load_cifar_dataset(train_paths: Sequence, test_path, fmt: str = "auto") -> Dataset:
    xs, ys = [], []
    for p in train_paths:
        x, y = load_cifar_binary(p, fmt)
        xs.append(x)
        ys.append(y)
    train_x = np.concatenate(xs)
    train_y = np.concatenate(ys)
    test_x, test_y = load_cifar_binary(test_path, fmt)
    num_classes = int(max(train_y.max(), test_y.max())) + 1
    return Dataset(train_x, train_y, test_x, test_y, num_classes)


# ---------------------------------------------------------------------------
# synthetic Gaussian benchmark

@dataclass
class GaussianSpec:
    """Desk-scale benchmark: class means on a radius-r sphere, isotropic
    within-class noise. ``pair_offset`` groups classes (2i, 2i+1) around a
    shared direction for the confusion protocol."""

    num_classes: int = 10
    dim: int = 32
    train_per_class: int = 500
    test_per_class: int = 100
    radius: float = 3.0
    sigma: float = 1.0
    pair_offset: Optional[float] = None


def _draw_means(spec: GaussianSpec, rng: np.random.Generator) -> np.ndarray:
    means = np.empty((spec.num_classes, spec.dim))
    if spec.pair_offset is None:
        for c in range(spec.num_classes):
            v = rng.standard_normal(spec.dim)
            means[c] = v / np.linalg.norm(v) * spec.radius
    else:
        for base in range(0, spec.num_classes, 2):
            v = rng.standard_normal(spec.dim)
            v = v / np.linalg.norm(v) * spec.radius
            off = rng.standard_normal(spec.dim)
            off = off / np.linalg.norm(off) * spec.pair_offset
            means[base] = v
            if base + 1 < spec.num_classes:
                means[base + 1] = v + off
    return means


def gen_synthetic_gaussian(spec: GaussianSpec, seed: int) -> Dataset:
    """Deterministic synthetic dataset; train and test draws are disjoint."""
    rng = np.random.default_rng(seed)
    means = _draw_means(spec, rng)

    def draw(count):
        xs, ys = [], []
        for c in range(spec.num_classes):
            xs.append(means[c] + rng.normal(0.0, spec.sigma, size=(count, spec.dim)))
            ys.append(np.full(count, c, dtype=np.intp))
        return np.concatenate(xs), np.concatenate(ys)

    train_x, train_y = draw(spec.train_per_class)
    test_x, test_y = draw(spec.test_per_class)
    return Dataset(train_x, train_y, test_x, test_y, spec.num_classes)


def class_means(spec: GaussianSpec, seed: int) -> np.ndarray:
    """The exact class means used by :func:`gen_synthetic_gaussian`."""
    return _draw_means(spec, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# JSON-lines dataset interchange

def save_jsonl(dataset: Dataset, path) -> None:
    """One record per sample: {"features": [...], "label": int, "split": ...}."""
    with open(path, "w") as fh:
        for x, y in zip(dataset.train_x, dataset.train_y):
            fh.write(json.dumps({"features": [float(v) for v in x],
                                 "label": int(y), "split": "train"}))
            fh.write("\n")
        for x, y in zip(dataset.test_x, dataset.test_y):
            fh.write(json.dumps({"features": [float(v) for v in x],
                                 "label": int(y), "split": "test"}))
            fh.write("\n")


def load_jsonl(path) -> Dataset:
    train_x, train_y, test_x, test_y = [], [], [], []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("split") == "train":
                train_x.append(rec["features"])
                train_y.append(rec["label"])
            elif rec.get("split") == "test":
                test_x.append(rec["features"])
                test_y.append(rec["label"])
            else:
                raise ValueError(f"{path}:{line_no}: split must be 'train' or 'test'")
    if not train_x:
        raise ValueError(f"{path}: no training records")
    tx = np.asarray(train_x, dtype=np.float64)
    ty = np.asarray(train_y, dtype=np.intp)
    vx = np.asarray(test_x, dtype=np.float64) if test_x else np.empty((0, tx.shape[1]))
    vy = np.asarray(test_y, dtype=np.intp) if test_y else np.empty(0, dtype=np.intp)
    num_classes = int(max(ty.max(), vy.max() if vy.size else 0)) + 1
    return Dataset(tx, ty, vx, vy, num_classes)
