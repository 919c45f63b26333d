"""Per-method step behavior, determinism, and desk-scale directionality."""

import numpy as np
import pytest

from bisoncl.harness import run_single
from bisoncl.losses import cross_entropy
from bisoncl.methods import (BisonMethod, MethodConfig, StepContext, make_method)
from bisoncl.model import ModelConfig, extractor_forward, init_model, linear_logits
from bisoncl.replay import MemoryBuffer
from bisoncl.stream import AugmentPolicy, GaussianSpec, gen_synthetic_gaussian
from bisoncl.tensor import SgdConfig, backward, sgd_step

from conftest import aggregate, grad_or_zeros


MODEL_CFG = ModelConfig(input_dim=4, num_classes=6, hidden_dims=(8,), embed_dim=5)


def small_dataset(num_classes=6, per_class=20, dim=4, seed=0):
    spec = GaussianSpec(num_classes=num_classes, dim=dim, train_per_class=per_class,
                        test_per_class=8, radius=3.0, sigma=0.8)
    return gen_synthetic_gaussian(spec, seed=seed)


def ctx_for(task_classes, seen):
    return StepContext(task_index=0, task_classes=tuple(task_classes),
                       seen_classes=tuple(seen))


class RecordingBuffer(MemoryBuffer):
    """Buffer that records retrieval sizes, for batch-composition checks."""

    def __init__(self, capacity):
        super().__init__(capacity)
        self.retrieved = []

    def random_retrieve(self, k, rng):
        feats, labels = super().random_retrieve(k, rng)
        self.retrieved.append(labels.size)
        return feats, labels


class TestMethodConfig:
    def test_bison_requires_ncm(self):
        with pytest.raises(ValueError, match="ncm"):
            MethodConfig(method="bison", inference="linear-softmax")

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError, match="unknown method"):
            MethodConfig(method="mystery")

    def test_default_inference_modes(self):
        assert MethodConfig(method="er").inference == "linear-softmax"
        assert MethodConfig(method="er-ncm").inference == "ncm"
        assert MethodConfig(method="bison").inference == "ncm"


class TestFinetune:
    def test_buffer_never_consulted(self):
        method = make_method(MethodConfig(method="finetune"))
        model = init_model(MODEL_CFG, seed=0)
        buf = RecordingBuffer(10)
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, (5, 4))
        y = rng.integers(0, 2, 5)
        method.train_step(model, x, y, buf, ctx_for([0, 1], [0, 1]), rng)
        assert buf.retrieved == []
        assert len(buf) == 0


class TestEr:
    def test_empty_buffer_step_equals_finetune(self):
        x = np.random.default_rng(1).uniform(-1, 1, (5, 4))
        y = np.random.default_rng(2).integers(0, 2, 5)
        finals = []
        for method_id in ("er", "finetune"):
            model = init_model(MODEL_CFG, seed=3)
            method = make_method(MethodConfig(method=method_id))
            method.train_step(model, x, y, MemoryBuffer(10),
                              ctx_for([0, 1], [0, 1]), np.random.default_rng(4))
            finals.append(model.w_stream.data.copy())
        np.testing.assert_array_equal(finals[0], finals[1])

    def test_mix_batch_composition(self):
        model = init_model(MODEL_CFG, seed=5)
        method = make_method(MethodConfig(method="er"))
        buf = RecordingBuffer(50)
        rng = np.random.default_rng(6)
        x = rng.uniform(-1, 1, (10, 4))
        y = rng.integers(0, 2, 10)
        method.train_step(model, x, y, buf, ctx_for([0, 1], [0, 1]), rng)  # fills buffer
        method.train_step(model, x, y, buf, ctx_for([0, 1], [0, 1]), rng)
        assert buf.retrieved == [0, 10]  # |B_M| matches |B_D| once available

    def test_er_ncm_beats_er_on_benchmark(self, gauss_benchmark):
        report, _ = gauss_benchmark
        assert (aggregate(report, "er-ncm")["aa_mean"]
                > aggregate(report, "er")["aa_mean"])


class TestBison:
    def test_first_step_updates_from_stream_ce_only(self):
        """With an empty buffer the update must match a plain masked-CE step
        through the stream head, bit for bit."""
        cfg = MethodConfig(method="bison", augmentation=AugmentPolicy("vector-noise"))
        rng_data = np.random.default_rng(7)
        x = rng_data.uniform(-1, 1, (6, 4))
        y = rng_data.integers(0, 2, 6)

        model = init_model(MODEL_CFG, seed=8)
        method = make_method(cfg)
        method.train_step(model, x, y, MemoryBuffer(10), ctx_for([0, 1], [0, 1]),
                          np.random.default_rng(9))

        manual = init_model(MODEL_CFG, seed=8)
        rng2 = np.random.default_rng(9)
        from bisoncl.model import cosine_logits
        from bisoncl.stream import with_augmented
        sx, sy = with_augmented(x, y, cfg.augmentation, rng2)
        loss = cross_entropy(sy, cosine_logits(extractor_forward(sx, manual),
                                               manual.w_stream, manual.scale_stream),
                             [0, 1])
        backward(loss)
        sgd_step(manual.extractor_params() + [manual.w_stream], cfg.sgd)
        np.testing.assert_array_equal(model.w_stream.data, manual.w_stream.data)
        np.testing.assert_array_equal(model.w_buffer.data, manual.w_buffer.data)

    def test_task_start_resets_smoother(self):
        model = init_model(MODEL_CFG, seed=10)
        model.smoother_raw.data[...] = 1.7
        BisonMethod(MethodConfig(method="bison")).start_task(model, 2)
        assert float(model.smoother_raw.data) == 0.0
        assert float(model.separation_smoother().data) == 0.5

    def test_smoother_and_buffer_invariants_across_steps(self):
        ds = small_dataset()
        cfg = MethodConfig(method="bison", augmentation=AugmentPolicy("vector-noise"))
        model = init_model(MODEL_CFG, seed=11)
        method = make_method(cfg)
        buf = MemoryBuffer(25)
        rng = np.random.default_rng(12)
        for start in range(0, 120, 10):
            x = ds.train_x[start:start + 10]
            y = ds.train_y[start:start + 10]
            method.train_step(model, x, y, buf, ctx_for(range(6), range(6)), rng)
            assert 0.0 < float(model.separation_smoother().data) < 1.0
            assert len(buf) <= 25

    def test_deterministic_final_weights(self):
        ds = small_dataset()
        finals = []
        for _ in range(2):
            res = run_single(ds, num_tasks=3, classes_per_task=2,
                             method_cfg=MethodConfig(
                                 method="bison",
                                 augmentation=AugmentPolicy("vector-noise")),
                             model_cfg=MODEL_CFG, capacity=30, seed=17)
            finals.append(res.model.w_stream.data.copy())
        np.testing.assert_array_equal(finals[0], finals[1])

    def test_remembers_retrieved_labels_for_next_step(self):
        model = init_model(MODEL_CFG, seed=13)
        method = make_method(MethodConfig(method="bison"))
        buf = MemoryBuffer(20)
        rng = np.random.default_rng(14)
        x = np.random.default_rng(15).uniform(-1, 1, (8, 4))
        y = np.asarray([0, 0, 1, 1, 2, 2, 3, 3])
        ctx = ctx_for(range(6), range(6))
        method.train_step(model, x, y, buf, ctx, rng)
        assert buf.prev_labels() == ()  # first retrieval was empty
        method.train_step(model, x, y, buf, ctx, rng)
        assert len(buf.prev_labels()) > 0
        assert set(buf.prev_labels()) <= {0, 1, 2, 3}


class TestSsilLite:
    def test_first_task_has_only_new_class_term(self):
        """Without old classes the step equals a stream-only CE step masked
        to the current task's classes."""
        x = np.random.default_rng(16).uniform(-1, 1, (5, 4))
        y = np.random.default_rng(17).integers(0, 2, 5)
        model = init_model(MODEL_CFG, seed=18)
        method = make_method(MethodConfig(method="ssil-lite"))
        method.train_step(model, x, y, MemoryBuffer(10), ctx_for([0, 1], [0, 1]),
                          np.random.default_rng(19))

        manual = init_model(MODEL_CFG, seed=18)
        loss = cross_entropy(y, linear_logits(extractor_forward(x, manual),
                                              manual.w_stream), [0, 1])
        backward(loss)
        sgd_step(manual.extractor_params() + [manual.w_stream], SgdConfig(0.1))
        np.testing.assert_array_equal(model.w_stream.data, manual.w_stream.data)

    def test_buffer_term_gradient_avoids_new_class_columns(self):
        model = init_model(MODEL_CFG, seed=20)
        rng = np.random.default_rng(21)
        old_classes = (0, 1)
        by = np.asarray([0, 1, 0])
        bx = rng.uniform(-1, 1, (3, 4))
        logits = linear_logits(extractor_forward(bx, model), model.w_stream)
        backward(cross_entropy(by, logits, old_classes))
        g = grad_or_zeros(model.w_stream)
        assert np.all(g[2:] == 0.0)  # new-class rows untouched
        assert np.any(g[:2] != 0.0)

    def test_current_task_buffer_samples_excluded_from_old_term(self):
        """A buffer batch containing only current-task samples adds nothing
        beyond the stream term."""
        x = np.random.default_rng(22).uniform(-1, 1, (4, 4))
        y = np.asarray([2, 3, 2, 3])
        finals = []
        for preload in (False, True):
            model = init_model(MODEL_CFG, seed=23)
            method = make_method(MethodConfig(method="ssil-lite"))
            buf = MemoryBuffer(10)
            rng = np.random.default_rng(24)
            if preload:
                for i in range(4):
                    buf.reservoir_update(x[i], int(y[i]), rng)
            rng_step = np.random.default_rng(25)
            method.train_step(model, x, y, buf,
                              StepContext(task_index=1, task_classes=(2, 3),
                                          seen_classes=(0, 1, 2, 3)), rng_step)
            finals.append(model.w_stream.data.copy())
        np.testing.assert_array_equal(finals[0], finals[1])


class TestSubstitutability:
    def test_all_methods_yield_same_matrix_shape(self):
        ds = small_dataset()
        shapes = []
        for method_id in ("bison", "finetune", "er", "er-ncm", "ssil-lite"):
            res = run_single(ds, num_tasks=3, classes_per_task=2,
                             method_cfg=MethodConfig(method=method_id),
                             model_cfg=MODEL_CFG, capacity=30, seed=1)
            shapes.append([len(r) for r in res.matrix.rows])
        assert all(s == shapes[0] for s in shapes)
        assert shapes[0] == [1, 2, 3]


class TestDirectionality:
    def test_finetune_forgets_catastrophically(self, gauss_benchmark):
        report, _ = gauss_benchmark
        ft = aggregate(report, "finetune")
        assert ft["aa_mean"] <= 0.35
        assert ft["af_mean"] >= 0.5

    def test_bison_orders_against_er(self, gauss_benchmark):
        report, _ = gauss_benchmark
        bison = aggregate(report, "bison")
        er = aggregate(report, "er")
        assert bison["aa_mean"] >= er["aa_mean"]
        assert bison["af_mean"] <= er["af_mean"]

    def test_confusion_structure_differs_from_bison_on_fixed_schedule(self):
        """On the pair-structured dataset with the confusion schedule, the
        exclusive-separation baseline and the dual-head method distribute
        their errors differently."""
        from bisoncl.metrics import SimilarPairs, row_normalize, sc_at_1

        spec = GaussianSpec(num_classes=10, dim=16, train_per_class=60,
                            test_per_class=20, radius=3.0, sigma=0.8, pair_offset=1.0)
        ds = gen_synthetic_gaussian(spec, seed=3)
        model_cfg = ModelConfig(input_dim=16, num_classes=10, hidden_dims=(32,),
                                embed_dim=8)
        schedule = [[0, 2], [1, 4], [3, 6], [5, 8], [7, 9]]
        pairs = SimilarPairs([(2 * i, 2 * i + 1) for i in range(5)])
        sc_by_method = {}
        for method_id in ("bison", "ssil-lite"):
            res = run_single(ds, num_tasks=5, classes_per_task=2,
                             method_cfg=MethodConfig(method=method_id),
                             model_cfg=model_cfg, capacity=100, seed=0,
                             fixed_class_order=schedule)
            m_row = row_normalize(res.confusion.counts)
            sc_by_method[method_id] = [sc_at_1(m_row, pairs, c) for c in range(10)]
        assert sc_by_method["bison"] != sc_by_method["ssil-lite"]
        for values in sc_by_method.values():
            assert all(0.0 <= v <= 1.0 for v in values)
