"""Single-run training loop, boundary evaluation, and the experiment grid.

A run drives one method over one task stream: train on every stream batch
exactly once, and at each task boundary build the inference state (NCM
centroids from the buffer, or the masked linear head) and score all tasks
seen so far. Per-task upper bounds come from a fine-tuning run over the
same stream and feed the intransigence metric.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .metrics import AccuracyMatrix, ConfusionMatrix
from .model import (ModelConfig, ModelState, embed, init_model, ncm_centroids,
                    ncm_predict_embeddings)
from .methods import Method, MethodConfig, StepContext, make_method
from .replay import MemoryBuffer
from .stream import Dataset, TaskStream, build_task_stream


@dataclass
class RunHooks:
    """Observation points for tests and tracing; both run before the step."""

    on_task_start: Optional[Callable] = None  # (task_index, model)
    on_step: Optional[Callable] = None        # (ctx, batch, model)


@dataclass
class RunResult:
    matrix: AccuracyMatrix
    confusion: ConfusionMatrix            # after the final task
    task_confusions: list                 # one ConfusionMatrix per boundary
    model: ModelState
    buffer: MemoryBuffer
    duration_s: float


def _derived_seeds(seed: int) -> dict:
    ss = np.random.SeedSequence(seed)
    kids = ss.spawn(4)
    return {
        "model": int(kids[0].generate_state(1)[0]),
        "class_order": int(kids[1].generate_state(1)[0]),
        "sample_order": int(kids[2].generate_state(1)[0]),
        "steps": kids[3],
    }


def predict_linear(model: ModelState, x: np.ndarray,
                   seen_classes: Sequence[int]) -> np.ndarray:
    """Masked argmax over the single linear head."""
    logits = embed(x, model) @ model.w_stream.data.T
    mask = np.full(logits.shape[1], -np.inf)
    mask[list(seen_classes)] = 0.0
    return np.argmax(logits + mask, axis=1)


def evaluate_boundary(model: ModelState, method: Method, buffer: MemoryBuffer,
                      stream: TaskStream, upto_task: int):
    """Accuracy on each task 0..upto_task plus the confusion counts over all
    test samples evaluated at this boundary."""
    seen = stream.seen_classes(upto_task)
    confusion = ConfusionMatrix.zeros(model.config.num_classes)
    if method.inference == "ncm":
        centroids = ncm_centroids(buffer, model)

        def predict(x):
            return ncm_predict_embeddings(embed(x, model), centroids)
    else:
        def predict(x):
            return predict_linear(model, x, seen)

    accs = []
    for task in stream.tasks[:upto_task + 1]:
        preds = predict(task.test_x)
        accs.append(float(np.mean(preds == task.test_y)))
        confusion.update(task.test_y, preds)
    return accs, confusion


def run_single(dataset: Dataset, *, num_tasks: int, classes_per_task: int,
               method_cfg: MethodConfig, model_cfg: ModelConfig,
               capacity: int, seed: int, stream_batch_size: int = 10,
               buffer_batch_size: Optional[int] = None,
               fixed_class_order=None, hooks: Optional[RunHooks] = None) -> RunResult:
    """One (method, capacity, seed) cell: single pass over the stream with
    an evaluation at every task boundary."""
    t0 = time.perf_counter()
    seeds = _derived_seeds(seed)
    stream = build_task_stream(
        dataset, num_tasks, classes_per_task,
        class_order_seed=seeds["class_order"], sample_order_seed=seeds["sample_order"],
        batch_size=stream_batch_size, fixed_class_order=fixed_class_order)
    model = init_model(model_cfg, seeds["model"])
    buffer = MemoryBuffer(capacity)
    method = make_method(method_cfg)
    step_rng = np.random.default_rng(seeds["steps"])

    matrix = AccuracyMatrix()
    task_confusions: list[ConfusionMatrix] = []
    confusion = ConfusionMatrix.zeros(model_cfg.num_classes)

    def close_task(task_index: int) -> None:
        nonlocal confusion
        accs, conf = evaluate_boundary(model, method, buffer, stream, task_index)
        matrix.add_row(accs)
        task_confusions.append(conf)
        confusion = conf

    current_task = -1
    while (batch := stream.next_batch()) is not None:
        if batch.task_start:
            if current_task >= 0:
                close_task(current_task)
            current_task = batch.task_index
            method.start_task(model, current_task)
            if hooks and hooks.on_task_start:
                hooks.on_task_start(current_task, model)
        ctx = StepContext(
            task_index=batch.task_index,
            task_classes=stream.tasks[batch.task_index].classes,
            seen_classes=tuple(stream.seen_classes(batch.task_index)),
            buffer_k=buffer_batch_size)
        if hooks and hooks.on_step:
            hooks.on_step(ctx, batch, model)
        method.train_step(model, batch.x, batch.y, buffer, ctx, step_rng)
    if current_task >= 0:
        close_task(current_task)

    return RunResult(matrix=matrix, confusion=confusion,
                     task_confusions=task_confusions, model=model, buffer=buffer,
                     duration_s=time.perf_counter() - t0)


def compute_upper_bounds(dataset: Dataset, *, num_tasks: int, classes_per_task: int,
                         model_cfg: ModelConfig, seed: int,
                         stream_batch_size: int = 10, fixed_class_order=None,
                         mode: str = "sequential",
                         sgd_learning_rate: float = 0.1) -> list[float]:
    """Per-task accuracy ceilings from pure fine-tuning.

    'sequential' (default) runs the fine-tune baseline over the same stream
    and takes its just-trained diagonal a[j][j]. 'from-scratch' trains a
    fresh model on each task alone and scores it on that task.
    """
    from .tensor import SgdConfig

    if mode not in ("sequential", "from-scratch"):
        raise ValueError(f"unknown upper-bound mode {mode!r}")
    ft_cfg = MethodConfig(method="finetune", sgd=SgdConfig(sgd_learning_rate))
    if mode == "sequential":
        result = run_single(
            dataset, num_tasks=num_tasks, classes_per_task=classes_per_task,
            method_cfg=ft_cfg, model_cfg=model_cfg, capacity=1, seed=seed,
            stream_batch_size=stream_batch_size, fixed_class_order=fixed_class_order)
        return [result.matrix.entry(j, j) for j in range(num_tasks)]

    seeds = _derived_seeds(seed)
    stream = build_task_stream(
        dataset, num_tasks, classes_per_task,
        class_order_seed=seeds["class_order"], sample_order_seed=seeds["sample_order"],
        batch_size=stream_batch_size, fixed_class_order=fixed_class_order)
    method = make_method(ft_cfg)
    bounds = []
    for task in stream.tasks:
        model = init_model(model_cfg, seeds["model"])
        buffer = MemoryBuffer(1)
        ctx = StepContext(task_index=task.index, task_classes=task.classes,
                          seen_classes=task.classes, buffer_k=None)
        n = task.train_x.shape[0]
        for start in range(0, n, stream_batch_size):
            end = min(start + stream_batch_size, n)
            method.train_step(model, task.train_x[start:end], task.train_y[start:end],
                              buffer, ctx, np.random.default_rng(0))
        preds = predict_linear(model, task.test_x, task.classes)
        bounds.append(float(np.mean(preds == task.test_y)))
    return bounds
