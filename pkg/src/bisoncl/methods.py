"""Per-step training procedures behind a common method interface.

Methods share the trainable state but differ in which heads they train,
what they replay, and how they infer:

* ``bison``: dual cosine heads, proxy-anchor and alignment terms, NCM
  inference; the separation smoother restarts at each task boundary.
* ``finetune``: single linear head on stream batches only (no buffer);
  doubles as the per-task upper-bound reference.
* ``er`` / ``er-ncm``: single linear head on the mixed stream+buffer batch,
  with linear-softmax or NCM inference.
* ``ssil-lite``: single linear head with exclusive loss separation; the
  stream term's softmax spans only the current task's classes and the
  buffer term's only earlier classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .losses import LossWeights, StepBatch, bison_loss, cross_entropy
from .model import ModelState, extractor_forward, linear_logits
from .replay import MemoryBuffer
from .stream import AugmentPolicy, with_augmented
from .tensor import SgdConfig, backward, sgd_step

METHOD_IDS = ("bison", "finetune", "er", "er-ncm", "ssil-lite")


@dataclass
class MethodConfig:
    method: str = "bison"
    weights: LossWeights = field(default_factory=LossWeights)
    sgd: SgdConfig = field(default_factory=SgdConfig)
    inference: str = ""  # defaulted per method
    augmentation: AugmentPolicy = field(default_factory=AugmentPolicy)

    def __post_init__(self):
        if self.method not in METHOD_IDS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHOD_IDS}")
        defaults = {"bison": "ncm", "finetune": "linear-softmax", "er": "linear-softmax",
                    "er-ncm": "ncm", "ssil-lite": "linear-softmax"}
        if not self.inference:
            self.inference = defaults[self.method]
        if self.inference not in ("ncm", "linear-softmax"):
            raise ValueError(f"unknown inference mode {self.inference!r}")
        if self.method == "bison" and self.inference != "ncm":
            raise ValueError("bison infers with ncm only")


@dataclass
class StepContext:
    """Where the stream currently is: the task, its classes, and every class
    seen so far (current task included). ``buffer_k`` overrides the retrieved
    batch size; None matches the incoming stream batch."""

    task_index: int
    task_classes: tuple
    seen_classes: tuple
    buffer_k: int | None = None

    def retrieval_size(self, stream_batch_len: int) -> int:
        return self.buffer_k if self.buffer_k else stream_batch_len


class Method:
    """One training procedure; holds no state beyond its config."""

    uses_buffer = True

    def __init__(self, config: MethodConfig):
        self.config = config

    @property
    def inference(self) -> str:
        return self.config.inference

    def start_task(self, model: ModelState, task_index: int) -> None:
        pass

    def train_step(self, model: ModelState, x: np.ndarray, y: np.ndarray,
                   buffer: MemoryBuffer, ctx: StepContext,
                   rng: np.random.Generator) -> None:
        raise NotImplementedError


def _reservoir_offer(buffer: MemoryBuffer, x: np.ndarray, y: np.ndarray,
                     rng: np.random.Generator) -> None:
    for i in range(x.shape[0]):
        buffer.reservoir_update(x[i], int(y[i]), rng)


class BisonMethod(Method):
    def start_task(self, model: ModelState, task_index: int) -> None:
        model.reset_smoother()

    def train_step(self, model, x, y, buffer, ctx, rng):
        buf_x, buf_y = buffer.random_retrieve(ctx.retrieval_size(x.shape[0]), rng)
        policy = self.config.augmentation
        sx, sy = with_augmented(x, y, policy, rng)
        z_stream = extractor_forward(sx, model)
        z_buffer, y_buffer = None, None
        if buf_y.size:
            bx, by = with_augmented(buf_x, buf_y, policy, rng)
            z_buffer = extractor_forward(bx, model)
            y_buffer = by
        batch = StepBatch(z_stream=z_stream, y_stream=sy,
                          z_buffer=z_buffer, y_buffer=y_buffer,
                          prev_buffer_labels=buffer.prev_labels())
        loss = bison_loss(batch, model, self.config.weights, ctx.seen_classes)
        backward(loss)
        params = model.extractor_params() + [model.w_stream, model.scale_stream]
        if batch.has_buffer:
            params += [model.w_buffer, model.scale_buffer, model.smoother_raw]
        elif batch.prev_buffer_labels and self.config.weights.align_weight != 0.0:
            params += [model.w_buffer]
        sgd_step(params, self.config.sgd)
        _reservoir_offer(buffer, x, y, rng)
        buffer.remember_labels(buf_y)


class FinetuneMethod(Method):
    uses_buffer = False

    def train_step(self, model, x, y, buffer, ctx, rng):
        sx, sy = with_augmented(x, y, self.config.augmentation, rng)
        logits = linear_logits(extractor_forward(sx, model), model.w_stream)
        loss = cross_entropy(sy, logits, ctx.seen_classes)
        backward(loss)
        sgd_step(model.extractor_params() + [model.w_stream], self.config.sgd)


class ErMethod(Method):
    def train_step(self, model, x, y, buffer, ctx, rng):
        buf_x, buf_y = buffer.random_retrieve(ctx.retrieval_size(x.shape[0]), rng)
        if buf_y.size:
            mix_x = np.concatenate([x, buf_x], axis=0)
            mix_y = np.concatenate([y, buf_y])
        else:
            mix_x, mix_y = x, y
        mix_x, mix_y = with_augmented(mix_x, mix_y, self.config.augmentation, rng)
        logits = linear_logits(extractor_forward(mix_x, model), model.w_stream)
        loss = cross_entropy(mix_y, logits, ctx.seen_classes)
        backward(loss)
        sgd_step(model.extractor_params() + [model.w_stream], self.config.sgd)
        _reservoir_offer(buffer, x, y, rng)
        buffer.remember_labels(buf_y)


class SsilLiteMethod(Method):
    """Exclusive loss separation in a single head: new-class and old-class
    terms are masked to disjoint softmaxes and summed."""

    def train_step(self, model, x, y, buffer, ctx, rng):
        buf_x, buf_y = buffer.random_retrieve(ctx.retrieval_size(x.shape[0]), rng)
        old_classes = tuple(c for c in ctx.seen_classes if c not in ctx.task_classes)
        sx, sy = with_augmented(x, y, self.config.augmentation, rng)
        logits = linear_logits(extractor_forward(sx, model), model.w_stream)
        loss = cross_entropy(sy, logits, ctx.task_classes)
        if buf_y.size and old_classes:
            keep = np.isin(buf_y, old_classes)
            if np.any(keep):
                bx, by = with_augmented(buf_x[keep], buf_y[keep],
                                        self.config.augmentation, rng)
                buf_logits = linear_logits(extractor_forward(bx, model), model.w_stream)
                loss = T.add(loss, cross_entropy(by, buf_logits, old_classes))
        backward(loss)
        sgd_step(model.extractor_params() + [model.w_stream], self.config.sgd)
        _reservoir_offer(buffer, x, y, rng)
        buffer.remember_labels(buf_y)


_METHOD_CLASSES = {
    "bison": BisonMethod,
    "finetune": FinetuneMethod,
    "er": ErMethod,
    "er-ncm": ErMethod,
    "ssil-lite": SsilLiteMethod,
}


def make_method(config: MethodConfig) -> Method:
    return _METHOD_CLASSES[config.method](config)
