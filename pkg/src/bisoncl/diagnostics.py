"""Self-checks: finite-difference gradient suite, gradient-flow contract,
and statistical benches for the reservoir and the metric formulas.

These back both the test suite and the ``grad-check`` / ``bench`` CLI
subcommands, so the checks run without the test tree installed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .losses import (LossWeights, StepBatch, align_loss, bison_loss, cross_entropy,
                     dc_loss, pal_loss)
from .metrics import AccuracyMatrix, average_accuracy, average_forgetting, \
    average_intransigence
from .model import ModelConfig, cosine_logits, extractor_forward, init_model
from .replay import MemoryBuffer
from .tensor import Tensor, backward, finite_diff_check_params


@dataclass
class LossInstance:
    model: object
    x_stream: np.ndarray
    y_stream: np.ndarray
    x_buffer: np.ndarray
    y_buffer: np.ndarray
    prev_labels: tuple
    weights: LossWeights
    seen: tuple

    def step_batch(self) -> StepBatch:
        return StepBatch(
            z_stream=extractor_forward(self.x_stream, self.model),
            y_stream=self.y_stream,
            z_buffer=extractor_forward(self.x_buffer, self.model),
            y_buffer=self.y_buffer,
            prev_buffer_labels=self.prev_labels)


def random_loss_instance(rng: np.random.Generator) -> LossInstance:
    """Small random model plus stream/buffer batches, sized so the full
    finite-difference sweep stays fast (C <= 6, D <= 16, rows <= 8)."""
    c = int(rng.integers(2, 7))
    d = int(rng.integers(4, 17))
    in_dim = int(rng.integers(3, 7))
    cfg = ModelConfig(input_dim=in_dim, num_classes=c,
                      hidden_dims=(int(rng.integers(4, 9)),), embed_dim=d)
    model = init_model(cfg, seed=int(rng.integers(0, 2**31)))
    # generic parameter point: nonzero biases keep embeddings away from the
    # degenerate all-zero row where the cosine norm clamp kicks in
    for _, b in model.layers:
        b.data[...] = rng.uniform(-0.5, 0.5, size=b.data.shape)
    n_d = int(rng.integers(2, 5))
    n_m = int(rng.integers(2, 5))
    inst = LossInstance(
        model=model,
        x_stream=rng.uniform(-2, 2, (n_d, in_dim)),
        y_stream=rng.integers(0, c, n_d),
        x_buffer=rng.uniform(-2, 2, (n_m, in_dim)),
        y_buffer=rng.integers(0, c, n_m),
        prev_labels=tuple(sorted(set(int(v) for v in rng.integers(0, c, 2)))),
        weights=LossWeights(pal_weight=float(rng.uniform(0.05, 0.3)),
                            align_weight=float(rng.uniform(0.5, 3.0))),
        seen=tuple(range(c)))
    return inst


def loss_closures(inst: LossInstance) -> dict:
    """The five scalar losses as closures over the instance's parameters.

    The alignment snapshot is frozen here, once, so re-evaluating a closure
    (as the finite-difference sweep does) matches the per-step semantics:
    the stream-head values the alignment term compares against are a
    constant of the step, not a function of the perturbed parameters.
    """
    model, weights = inst.model, inst.weights
    snapshot = Tensor(model.w_stream.data.copy())

    def l_ce():
        logits = cosine_logits(extractor_forward(inst.x_stream, model),
                               model.w_stream, model.scale_stream)
        return cross_entropy(inst.y_stream, logits, inst.seen)

    def l_dc():
        return dc_loss(inst.step_batch(), model, inst.seen)

    def l_pal():
        z = extractor_forward(inst.x_buffer, model)
        return pal_loss(z, inst.y_buffer, model.w_stream, weights)

    def l_align():
        return align_loss(model.w_buffer, snapshot, inst.prev_labels)

    def l_total():
        return bison_loss(inst.step_batch(), model, weights, inst.seen,
                          w_stream_snapshot=snapshot)

    return {"cross_entropy": l_ce, "dual_classifier": l_dc,
            "proxy_anchor": l_pal, "alignment": l_align, "total": l_total}


def run_grad_check(num_instances: int = 20, seed: int = 0, eps: float = 1e-5) -> dict:
    """Worst finite-difference relative error per loss over random instances,
    swept across every trainable parameter."""
    rng = np.random.default_rng(seed)
    worst = {name: 0.0 for name in
             ("cross_entropy", "dual_classifier", "proxy_anchor", "alignment", "total")}
    for _ in range(num_instances):
        inst = random_loss_instance(rng)
        params = inst.model.trainables()
        for name, fn in loss_closures(inst).items():
            err = finite_diff_check_params(fn, params, eps=eps)
            worst[name] = max(worst[name], err)
    return worst


def _grad_or_zeros(p) -> np.ndarray:
    return p.grad if p.grad is not None else np.zeros_like(p.data)


def run_gradient_flow_check(num_instances: int = 10, seed: int = 1) -> dict:
    """Bitwise gradient-routing contract over random instances.

    Checks that (a) the alignment term moves no gradient into the stream
    head, (b) the buffer-head CE term contributes nothing to the stream
    head (ablating it leaves the stream-head gradient bit-identical), and
    (c) stream features contribute nothing to the buffer head.
    """
    rng = np.random.default_rng(seed)
    align_leaks = 0
    ce_buf_leaks = 0
    stream_to_buffer_leaks = 0
    for _ in range(num_instances):
        inst = random_loss_instance(rng)
        model = inst.model

        # (a) alignment term alone: stream head must stay untouched
        for p in model.trainables():
            p.grad = None
        backward(align_loss(model.w_buffer, model.w_stream, inst.prev_labels))
        if np.any(_grad_or_zeros(model.w_stream) != 0.0):
            align_leaks += 1

        # (b) stream-head gradient with and without the buffer-head CE term
        def dc_without_buffer_head():
            batch = inst.step_batch()
            s_stream = cosine_logits(batch.z_stream, model.w_stream, model.scale_stream)
            loss = cross_entropy(batch.y_stream, s_stream, inst.seen)
            smoother = model.separation_smoother()
            s_str_m = cosine_logits(batch.z_buffer, model.w_stream, model.scale_stream)
            return T.add(loss, T.mul(smoother,
                                     cross_entropy(batch.y_buffer, s_str_m, inst.seen)))

        for p in model.trainables():
            p.grad = None
        backward(dc_loss(inst.step_batch(), model, inst.seen))
        full = _grad_or_zeros(model.w_stream).copy()
        for p in model.trainables():
            p.grad = None
        backward(dc_without_buffer_head())
        ablated = _grad_or_zeros(model.w_stream).copy()
        if np.any(full != ablated):
            ce_buf_leaks += 1

        # (c) stream-batch CE through the stream head: buffer head untouched
        for p in model.trainables():
            p.grad = None
        logits = cosine_logits(extractor_forward(inst.x_stream, model),
                               model.w_stream, model.scale_stream)
        backward(cross_entropy(inst.y_stream, logits, inst.seen))
        if np.any(_grad_or_zeros(model.w_buffer) != 0.0):
            stream_to_buffer_leaks += 1

    return {"instances": num_instances, "align_to_stream_leaks": align_leaks,
            "buffer_ce_to_stream_leaks": ce_buf_leaks,
            "stream_to_buffer_leaks": stream_to_buffer_leaks}


# ---------------------------------------------------------------------------
# reservoir statistics

def run_reservoir_bench(capacity: int = 100, stream_len: int = 10_000,
                        trials: int = 500, seed: int = 7) -> dict:
    """Simulate full streams and measure what fraction of the final buffer
    came from the first half of the stream (expected 0.5)."""
    rng = np.random.default_rng(seed)
    fractions = np.empty(trials)
    for t in range(trials):
        buf = MemoryBuffer(capacity)
        for i in range(stream_len):
            buf.reservoir_update(np.array([float(i)]), 0, rng)
        feats, _ = buf.contents()
        fractions[t] = float(np.mean(feats[:, 0] < stream_len / 2))
    return {"capacity": capacity, "stream_len": stream_len, "trials": trials,
            "first_half_fraction": float(fractions.mean()),
            "fraction_std": float(fractions.std(ddof=1))}


def run_inclusion_bench(capacity: int = 20, stream_len: int = 200,
                        trials: int = 500, seed: int = 11) -> dict:
    """Empirical per-item inclusion frequency against capacity / n, reported
    as the worst deviation in binomial standard deviations."""
    rng = np.random.default_rng(seed)
    hits = np.zeros(stream_len)
    for _ in range(trials):
        buf = MemoryBuffer(capacity)
        for i in range(stream_len):
            buf.reservoir_update(np.array([float(i)]), 0, rng)
        feats, _ = buf.contents()
        hits[feats[:, 0].astype(int)] += 1
    p = capacity / stream_len
    sd = np.sqrt(p * (1 - p) / trials)
    worst = float(np.max(np.abs(hits / trials - p)) / sd)
    return {"expected_rate": p, "worst_deviation_sds": worst, "trials": trials}


# ---------------------------------------------------------------------------
# metric-formula oracle

def aa_direct(rows, k: int) -> float:
    return sum(rows[k - 1][j] for j in range(k)) / k


def af_direct(rows, k: int) -> float:
    total = 0.0
    for j in range(k - 1):
        total += max(rows[i][j] - rows[k - 1][j] for i in range(j, k - 1))
    return total / (k - 1)


def ai_direct(rows, bounds, k: int) -> float:
    return sum(bounds[j] - rows[j][j] for j in range(k)) / k


def run_metrics_bench(num_matrices: int = 1000, seed: int = 3) -> dict:
    """Compare the metric implementations against the direct formula
    transcription over random lower-triangular matrices (k <= 10)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(num_matrices):
        k = int(rng.integers(2, 11))
        matrix = AccuracyMatrix()
        for i in range(k):
            matrix.add_row(rng.uniform(0, 1, i + 1))
        matrix.upper_bounds = list(rng.uniform(0, 1, k))
        worst = max(worst,
                    abs(average_accuracy(matrix, k) - aa_direct(matrix.rows, k)),
                    abs(average_forgetting(matrix, k) - af_direct(matrix.rows, k)),
                    abs(average_intransigence(matrix, k)
                        - ai_direct(matrix.rows, matrix.upper_bounds, k)))
    return {"matrices": num_matrices, "max_abs_difference": worst}
