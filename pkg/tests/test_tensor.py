"""Autodiff core: op semantics, gradient correctness, tape properties."""

import numpy as np
import pytest

from bisoncl import tensor as T
from bisoncl.tensor import (SgdConfig, Tape, Tensor, backward, finite_diff_check,
                            sgd_step, stop_gradient)

from conftest import grad_or_zeros


class TestForwardOps:
    def test_matmul_identity(self):
        out = T.matmul(Tensor(np.eye(2)), Tensor([[3.0, 4.0], [5.0, 6.0]]))
        np.testing.assert_array_equal(out.data, [[3.0, 4.0], [5.0, 6.0]])

    def test_relu_sign_cases(self):
        out = T.relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_cosine_orthogonal(self):
        out = T.cosine_rows(Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]]))
        assert out.data[0] == pytest.approx(0.0, abs=1e-15)

    def test_cosine_scale_invariance(self):
        rng = np.random.default_rng(0)
        u = rng.uniform(-2, 2, (4, 5))
        v = rng.uniform(-2, 2, (4, 5))
        base = T.cosine_rows(Tensor(u), Tensor(v)).data
        scaled = T.cosine_rows(Tensor(3.7 * u), Tensor(0.004 * v)).data
        np.testing.assert_allclose(scaled, base, atol=1e-12)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        logits = Tensor(rng.uniform(-1e3, 1e3, (6, 9)))
        probs = T.softmax(logits).data
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_log_softmax_finite_for_large_logits(self):
        rng = np.random.default_rng(2)
        out = T.log_softmax(Tensor(rng.uniform(-1e3, 1e3, (5, 7)))).data
        assert np.all(np.isfinite(out))

    def test_shape_mismatch_reports_shapes(self):
        with pytest.raises(ValueError, match=r"\(2,\).*\(3,\)"):
            T.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))
        with pytest.raises(ValueError, match="matmul"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_concat_splits_gradient(self):
        a = Tensor([[1.0, 2.0]], requires_grad=True)
        b = Tensor([[3.0, 4.0], [5.0, 6.0]], requires_grad=True)
        out = T.concat([a, b], axis=0)
        backward(T.reduce_sum(T.mul(out, out)))
        np.testing.assert_array_equal(a.grad, [[2.0, 4.0]])
        np.testing.assert_array_equal(b.grad, [[6.0, 8.0], [10.0, 12.0]])


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        backward(T.reduce_sum(x))
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_sigmoid_gradient_at_zero(self):
        x = Tensor(0.0, requires_grad=True)
        backward(T.sigmoid(x))
        assert float(x.grad) == pytest.approx(0.25, abs=1e-15)

    def test_stop_gradient_definition(self):
        x = Tensor(3.0, requires_grad=True)
        y = Tensor(5.0, requires_grad=True)
        backward(T.mul(stop_gradient(x), y))
        assert np.all(grad_or_zeros(x) == 0.0)
        assert float(y.grad) == 3.0

    def test_stop_gradient_upstream_bitwise_zero(self):
        x = Tensor([1.0, -2.0], requires_grad=True)
        h = T.mul(x, Tensor([2.0, 2.0]))
        loss = T.reduce_sum(T.mul(stop_gradient(h), h))
        backward(loss)
        # only the live branch contributes; the marker side adds nothing
        np.testing.assert_array_equal(x.grad, h.data * 2.0)

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            backward(Tensor([1.0, 2.0], requires_grad=True))

    def test_fanout_accumulates(self):
        x = Tensor(2.0, requires_grad=True)
        backward(T.add(T.mul(x, x), x))  # d/dx (x^2 + x) = 2x + 1
        assert float(x.grad) == pytest.approx(5.0)

    def test_backward_deterministic_bitwise(self):
        data = np.random.default_rng(3).uniform(-2, 2, (4, 3))
        w = np.linspace(-1, 1, 9).reshape(3, 3)
        grads = []
        for _ in range(2):
            x = Tensor(data.copy(), requires_grad=True)
            loss = T.reduce_sum(T.log_softmax(T.matmul(T.relu(x), Tensor(w.copy()))))
            backward(loss)
            grads.append(x.grad.copy())
        np.testing.assert_array_equal(grads[0], grads[1])

    def test_tape_single_visit(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        a = T.mul(x, x)
        b = T.add(a, a)  # fan-out of a
        loss = T.reduce_sum(b)
        tape = Tape.trace(loss)
        assert len(tape.nodes) == len({id(t) for t in tape.nodes})
        for i, t in enumerate(tape.nodes):
            for inp in t.node.inputs:
                if inp.node is not None:
                    assert tape.nodes.index(inp) < i


FD_CASES = [
    ("add", lambda x: T.reduce_sum(T.mul(T.add(x, Tensor(np.ones(x.shape))), x))),
    ("sub", lambda x: T.reduce_sum(T.mul(T.sub(x, Tensor(0.5 * np.ones(x.shape))), x))),
    ("mul", lambda x: T.reduce_sum(T.mul(x, x))),
    ("div", lambda x: T.reduce_sum(T.div(Tensor(np.ones(x.shape)), T.add(x, Tensor(5.0))))),
    ("scale", lambda x: T.reduce_sum(T.scale(x, -1.7))),
    ("relu", lambda x: T.reduce_sum(T.mul(T.relu(x), x))),
    ("sigmoid", lambda x: T.reduce_sum(T.sigmoid(x))),
    ("exp", lambda x: T.reduce_sum(T.exp(x))),
    ("log", lambda x: T.reduce_sum(T.log(T.add(x, Tensor(3.0))))),
    ("sum_axis0", lambda x: T.reduce_sum(T.mul(T.reduce_sum(x, axis=0), T.reduce_sum(x, axis=0)))),
    ("sum_axis1", lambda x: T.reduce_sum(T.exp(T.reduce_sum(x, axis=1, keepdims=True)))),
    ("mean", lambda x: x.mean()),
    ("matmul", lambda x: T.reduce_sum(T.matmul(x, T.transpose(x)))),
    ("row_norm", lambda x: T.reduce_sum(T.row_l2_norm(x))),
    ("div_rows", lambda x: T.reduce_sum(T.div_rows(x, T.row_l2_norm(x, 1e-12)))),
    ("cosine_rows", lambda x: T.reduce_sum(T.cosine_rows(x, T.exp(x)))),
    ("cosine_matrix", lambda x: T.reduce_sum(T.cosine_matrix(x, T.add(x, Tensor(1.0))))),
    ("log_softmax", lambda x: T.reduce_sum(T.mul(T.log_softmax(x), Tensor(np.arange(12.0).reshape(4, 3))))),
    ("gather_rows", lambda x: T.reduce_sum(T.mul(T.gather_rows(x, [0, 2, 2]), T.gather_rows(x, [1, 3, 2])))),
    ("pick_labels", lambda x: T.reduce_sum(T.pick_labels(x, [0, 2, 1, 0]))),
]


class TestFiniteDifferences:
    @pytest.mark.parametrize("name,fn", FD_CASES, ids=[c[0] for c in FD_CASES])
    def test_op_matches_central_differences(self, name, fn):
        rng = np.random.default_rng(hash(name) % 2**32)
        x = Tensor(rng.uniform(-2, 2, (4, 3)))
        assert finite_diff_check(fn, x, eps=1e-5) <= 1e-4

    def test_sum_of_squares_tight(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.uniform(-2, 2, (3, 3)))
        err = finite_diff_check(lambda t: T.reduce_sum(T.mul(t, t)), x, eps=1e-5)
        assert err <= 1e-6

    def test_constant_map_zero_error(self):
        x = Tensor(np.ones(3))
        assert finite_diff_check(lambda t: Tensor(5.0), x) == 0.0

    def test_pal_instance(self):
        from bisoncl.losses import LossWeights, pal_loss

        rng = np.random.default_rng(11)
        w = Tensor(rng.uniform(-2, 2, (4, 5)))
        y = rng.integers(0, 4, 6)
        z0 = Tensor(rng.uniform(-2, 2, (6, 5)))
        weights = LossWeights()

        err = finite_diff_check(lambda z: pal_loss(z, y, w, weights), z0, eps=1e-5)
        assert err <= 1e-4


class TestSgd:
    def test_basic_step(self):
        p = Tensor(1.0, requires_grad=True)
        p.grad = np.asarray(2.0)
        sgd_step([p], SgdConfig(0.1))
        assert float(p.data) == pytest.approx(0.8)
        assert p.grad is None

    def test_zero_gradient_keeps_parameter(self):
        p = Tensor([1.0, 1.0], requires_grad=True)
        p.grad = np.zeros(2)
        sgd_step([p], SgdConfig(0.5))
        np.testing.assert_array_equal(p.data, [1.0, 1.0])

    def test_vector_step(self):
        p = Tensor([1.0, 1.0], requires_grad=True)
        p.grad = np.asarray([1.0, -1.0])
        sgd_step([p], SgdConfig(0.1))
        np.testing.assert_allclose(p.data, [0.9, 1.1])

    def test_missing_gradient_rejected(self):
        p = Tensor(1.0, requires_grad=True)
        with pytest.raises(ValueError, match="no gradient"):
            sgd_step([p], SgdConfig(0.1))

    def test_learning_rate_positive(self):
        with pytest.raises(ValueError):
            SgdConfig(0.0)
