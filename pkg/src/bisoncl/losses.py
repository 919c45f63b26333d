"""Training losses for the dual-classifier engine.

Four pieces combine into the total training objective:

* masked cross-entropy over the classes seen so far,
* the dual-classifier loss: stream-batch CE through the stream head plus a
  sigmoid-smoothed split of the buffer-batch CE between both heads,
* a redesigned proxy-anchor loss that treats stream-head rows as learnable
  class proxies and pulls/pushes buffer features against them,
* a proxy alignment penalty that rotates buffer-head rows toward a frozen
  snapshot of the matching stream-head rows.

Gradient routing is structural: stream features never reach the buffer head,
and the alignment term reaches only the buffer head (the stream side is
wrapped in a stop-gradient).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .model import ModelState, cosine_logits
from .tensor import Tensor


@dataclass
class LossWeights:
    """Coefficients of the combined loss.

    pal_weight and align_weight scale the proxy-anchor and alignment terms;
    pal_sharpness (> 0) and pal_margin (>= 0) shape the proxy-anchor
    exponentials.
    """

    pal_weight: float = 0.1
    align_weight: float = 3.0
    pal_sharpness: float = 32.0
    pal_margin: float = 0.1

    def __post_init__(self):
        if not self.pal_sharpness > 0:
            raise ValueError("pal_sharpness must be > 0")
        if self.pal_margin < 0 or self.pal_weight < 0 or self.align_weight < 0:
            raise ValueError("pal_margin, pal_weight, align_weight must be >= 0")


@dataclass
class StepBatch:
    """Features and labels for one training step.

    ``z_stream``/``z_buffer`` hold originals concatenated with their
    augmented copies; ``prev_buffer_labels`` is the distinct label set of
    the previous step's buffer batch (empty tuple on the first step).
    """

    z_stream: Tensor
    y_stream: np.ndarray
    z_buffer: Optional[Tensor] = None
    y_buffer: Optional[np.ndarray] = None
    prev_buffer_labels: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.z_stream.shape[0] != len(self.y_stream):
            raise ValueError("z_stream rows and y_stream length differ")
        has_z = self.z_buffer is not None and self.z_buffer.shape[0] > 0
        if has_z and self.z_buffer.shape[0] != len(self.y_buffer):
            raise ValueError("z_buffer rows and y_buffer length differ")

    @property
    def has_buffer(self) -> bool:
        return self.z_buffer is not None and self.z_buffer.shape[0] > 0


def class_mask(num_classes: int, allowed: Sequence[int]) -> np.ndarray:
    """Additive logit mask: 0 on allowed class columns, -inf elsewhere."""
    mask = np.full(num_classes, -np.inf)
    idx = np.asarray(sorted(set(int(c) for c in allowed)), dtype=np.intp)
    if idx.size == 0:
        raise ValueError("class_mask: allowed class set is empty")
    if idx.min() < 0 or idx.max() >= num_classes:
        raise ValueError(f"class_mask: allowed classes {list(idx)} outside [0, {num_classes})")
    mask[idx] = 0.0
    return mask


def cross_entropy(labels: np.ndarray, logits: Tensor,
                  allowed_classes: Sequence[int]) -> Tensor:
    """Mean negative log-softmax of the true class, with logits of classes
    not yet seen masked to -inf before the softmax."""
    labels = np.asarray(labels, dtype=np.intp)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"cross_entropy: {labels.shape} labels for {n} logit rows")
    allowed = set(int(a) for a in allowed_classes)
    bad = [int(l) for l in labels if int(l) not in allowed]
    if bad:
        raise ValueError(f"cross_entropy: labels {sorted(set(bad))} outside the seen classes")
    masked = T.add(logits, Tensor(class_mask(c, allowed)))
    log_probs = T.log_softmax(masked)
    picked = T.reduce_sum(T.pick_labels(log_probs, labels))
    return T.scale(picked, -1.0 / n)


def dc_loss(batch: StepBatch, model: ModelState,
            seen_classes: Sequence[int]) -> Tensor:
    """Dual-classifier loss.

    Stream features go through the stream head only. Buffer features go
    through both heads, with the two CE terms blended by the sigmoid of the
    raw smoother (weight s on the stream side, 1-s on the buffer side).
    With an empty buffer batch only the stream term remains and the
    smoother receives no gradient.
    """
    if batch.z_stream.shape[0] == 0:
        raise ValueError("dc_loss: stream batch is empty")
    s_stream = cosine_logits(batch.z_stream, model.w_stream, model.scale_stream)
    loss = cross_entropy(batch.y_stream, s_stream, seen_classes)
    if batch.has_buffer:
        smoother = model.separation_smoother()
        s_str_m = cosine_logits(batch.z_buffer, model.w_stream, model.scale_stream)
        s_buf_m = cosine_logits(batch.z_buffer, model.w_buffer, model.scale_buffer)
        ce_str_m = cross_entropy(batch.y_buffer, s_str_m, seen_classes)
        ce_buf_m = cross_entropy(batch.y_buffer, s_buf_m, seen_classes)
        loss = T.add(loss, T.add(T.mul(smoother, ce_str_m),
                                 T.mul(T.sub(Tensor(1.0), smoother), ce_buf_m)))
    return loss


def pal_loss(z_buffer: Tensor, y_buffer: np.ndarray, w_stream: Tensor,
             weights: LossWeights) -> Tensor:
    """Proxy-anchor loss over buffer features with stream-head rows as proxies.

    For each proxy the batch splits into same-class features (pulled, with a
    margin below which the pull saturates) and other-class features (pushed).
    The pull term averages over proxies whose class appears in the batch;
    the push term averages over every proxy row. Gradients reach both the
    features and the proxy matrix.
    """
    if z_buffer is None or z_buffer.shape[0] == 0:
        raise ValueError("pal_loss: buffer batch is empty (caller must skip)")
    y = np.asarray(y_buffer, dtype=np.intp)
    n, c = z_buffer.shape[0], w_stream.shape[0]
    if y.shape != (n,):
        raise ValueError(f"pal_loss: {y.shape} labels for {n} feature rows")
    if y.min() < 0 or y.max() >= c:
        raise ValueError(f"pal_loss: labels outside [0, {c})")

    cos = T.cosine_matrix(z_buffer, w_stream)  # (n, c)
    pos_mask = np.zeros((n, c))
    pos_mask[np.arange(n), y] = 1.0
    neg_mask = 1.0 - pos_mask
    num_pos_proxies = int(np.unique(y).size)

    gamma, delta = weights.pal_sharpness, weights.pal_margin
    # pull: exp(-gamma (cos - delta)) summed over same-class features
    pull = T.mul(T.exp(T.scale(T.add(cos, Tensor(-delta)), -gamma)), Tensor(pos_mask))
    pull_per_proxy = T.log(T.add(T.reduce_sum(pull, axis=0), Tensor(1.0)))
    # absent-class proxies sum to zero and contribute log(1) = 0
    pull_term = T.scale(T.reduce_sum(pull_per_proxy), 1.0 / num_pos_proxies)
    # push: exp(gamma (cos + delta)) summed over other-class features
    push = T.mul(T.exp(T.scale(T.add(cos, Tensor(delta)), gamma)), Tensor(neg_mask))
    push_per_proxy = T.log(T.add(T.reduce_sum(push, axis=0), Tensor(1.0)))
    push_term = T.scale(T.reduce_sum(push_per_proxy), 1.0 / c)
    return T.add(pull_term, push_term)


def align_loss(w_buffer: Tensor, w_stream_snapshot: Tensor,
               prev_buffer_labels: Sequence[int]) -> Tensor:
    """Mean (1 - cos) between buffer-head rows and the frozen stream-head
    rows for the classes of the previous buffer batch; zero when that label
    set is empty. Only the buffer head receives gradient.

    ``w_stream_snapshot`` is the stream head as it stood when the step
    began; it enters the graph through a stop-gradient and acts as a
    constant. Passing the live head is fine when the graph is built exactly
    once per step (the values coincide).
    """
    classes = sorted(set(int(c) for c in prev_buffer_labels))
    if not classes:
        return Tensor(0.0)
    if classes[0] < 0 or classes[-1] >= w_buffer.shape[0]:
        raise ValueError(f"align_loss: classes {classes} outside [0, {w_buffer.shape[0]})")
    rows_buf = T.gather_rows(w_buffer, classes)
    rows_str = T.stop_gradient(T.gather_rows(w_stream_snapshot, classes))
    cos = T.cosine_rows(rows_buf, rows_str)
    return T.scale(T.reduce_sum(T.sub(Tensor(np.ones(len(classes))), cos)),
                   1.0 / len(classes))


def bison_loss(batch: StepBatch, model: ModelState, weights: LossWeights,
               seen_classes: Sequence[int],
               w_stream_snapshot: Optional[Tensor] = None) -> Tensor:
    """Total loss: dual-classifier CE plus weighted proxy-anchor and
    alignment terms; each extra term is skipped when its inputs are empty.

    ``w_stream_snapshot`` defaults to the live stream head, which equals the
    start-of-step snapshot when the loss is built once per step; callers
    re-evaluating the loss (the finite-difference oracle) pass a copy frozen
    at step start.
    """
    loss = dc_loss(batch, model, seen_classes)
    if batch.has_buffer and weights.pal_weight != 0.0:
        loss = T.add(loss, T.scale(
            pal_loss(batch.z_buffer, batch.y_buffer, model.w_stream, weights),
            weights.pal_weight))
    if batch.prev_buffer_labels and weights.align_weight != 0.0:
        snapshot = w_stream_snapshot if w_stream_snapshot is not None else model.w_stream
        loss = T.add(loss, T.scale(
            align_loss(model.w_buffer, snapshot, batch.prev_buffer_labels),
            weights.align_weight))
    return loss
