"""Model state, heads, NCM inference, checkpoint round trip."""

import numpy as np
import pytest

from bisoncl.model import (Centroids, ModelConfig, cosine_logits, embed,
                           extractor_forward, init_model, linear_logits, load_model,
                           ncm_centroids, ncm_predict_embeddings, save_model)
from bisoncl.replay import MemoryBuffer
from bisoncl.tensor import Tensor


CFG = ModelConfig(input_dim=6, num_classes=10, hidden_dims=(8,), embed_dim=4)


class TestInit:
    def test_seeded_init_is_bitwise_reproducible(self):
        a = init_model(CFG, seed=42)
        b = init_model(CFG, seed=42)
        for pa, pb in zip(a.trainables(), b.trainables()):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_smoother_starts_at_half(self):
        model = init_model(CFG, seed=0)
        assert float(model.smoother_raw.data) == 0.0
        assert float(model.separation_smoother().data) == 0.5

    def test_head_shapes(self):
        model = init_model(ModelConfig(input_dim=5, num_classes=10, embed_dim=32), seed=1)
        assert model.w_stream.shape == (10, 32)
        assert model.w_buffer.shape == (10, 32)
        assert model.w_stream.shape == model.w_buffer.shape

    def test_scales_start_at_config_value(self):
        model = init_model(CFG, seed=0)
        assert float(model.scale_stream.data) == 10.0
        assert float(model.scale_buffer.data) == 10.0

    def test_clone_is_independent(self):
        model = init_model(CFG, seed=0)
        copy = model.clone()
        copy.w_stream.data += 1.0
        assert np.all(model.w_stream.data != copy.w_stream.data)


class TestExtractor:
    def test_zero_network_maps_to_zero(self):
        model = init_model(CFG, seed=0)
        for w, b in model.layers:
            w.data[...] = 0.0
            b.data[...] = 0.0
        out = extractor_forward(np.ones((3, 6)), model)
        np.testing.assert_array_equal(out.data, np.zeros((3, 4)))

    def test_identity_single_layer(self):
        cfg = ModelConfig(input_dim=4, num_classes=3, hidden_dims=(), embed_dim=4)
        model = init_model(cfg, seed=0)
        model.layers[0][0].data[...] = np.eye(4)
        model.layers[0][1].data[...] = 0.0
        x = np.random.default_rng(0).uniform(-1, 1, (5, 4))
        np.testing.assert_allclose(extractor_forward(x, model).data, x)

    def test_batch_shape(self):
        model = init_model(CFG, seed=0)
        assert extractor_forward(np.zeros((7, 6)), model).shape == (7, 4)

    def test_row_permutation_equivariance(self):
        model = init_model(CFG, seed=3)
        x = np.random.default_rng(1).uniform(-2, 2, (6, 6))
        perm = np.random.default_rng(2).permutation(6)
        out = embed(x, model)
        out_perm = embed(x[perm], model)
        np.testing.assert_array_equal(out_perm, out[perm])

    def test_width_mismatch_rejected(self):
        model = init_model(CFG, seed=0)
        with pytest.raises(ValueError, match="expected"):
            extractor_forward(np.zeros((2, 5)), model)


class TestCosineLogits:
    def test_parallel_row_hits_scale(self):
        w = Tensor(np.random.default_rng(0).uniform(-1, 1, (3, 4)))
        scale = Tensor(10.0)
        z = Tensor(2.5 * w.data[1:2])  # positive multiple of row 1
        logits = cosine_logits(z, w, scale)
        assert float(logits.data[0, 1]) == pytest.approx(10.0, abs=1e-9)

    def test_orthogonal_row_is_zero(self):
        w = Tensor(np.asarray([[1.0, 0.0], [0.0, 1.0]]))
        logits = cosine_logits(Tensor([[1.0, 0.0]]), w, Tensor(7.0))
        assert float(logits.data[0, 1]) == pytest.approx(0.0, abs=1e-12)

    def test_scale_invariance_of_features(self):
        rng = np.random.default_rng(5)
        w = Tensor(rng.uniform(-1, 1, (4, 6)))
        z = rng.uniform(-1, 1, (3, 6))
        base = cosine_logits(Tensor(z), w, Tensor(10.0)).data
        scaled = cosine_logits(Tensor(5.0 * z), w, Tensor(10.0)).data
        np.testing.assert_allclose(scaled, base, atol=1e-12)

    def test_logit_magnitude_bound(self):
        rng = np.random.default_rng(6)
        w = Tensor(rng.uniform(-2, 2, (5, 4)))
        z = Tensor(rng.uniform(-2, 2, (8, 4)))
        eta = Tensor(-3.25)
        logits = cosine_logits(z, w, eta).data
        assert np.all(np.abs(logits) <= abs(float(eta.data)) + 1e-9)

    def test_argmax_invariant_to_row_rescaling(self):
        rng = np.random.default_rng(7)
        w = rng.uniform(-1, 1, (5, 4))
        z = Tensor(rng.uniform(-1, 1, (6, 4)))
        base = np.argmax(cosine_logits(z, Tensor(w), Tensor(10.0)).data, axis=1)
        w_scaled = w * rng.uniform(0.1, 9.0, (5, 1))
        rescaled = np.argmax(cosine_logits(z, Tensor(w_scaled), Tensor(10.0)).data, axis=1)
        np.testing.assert_array_equal(base, rescaled)


class TestNcm:
    def _buffer(self, feats, labels):
        buf = MemoryBuffer(capacity=len(labels))
        rng = np.random.default_rng(0)
        for f, l in zip(feats, labels):
            buf.reservoir_update(np.asarray(f, dtype=float), l, rng)
        return buf

    def _identity_model(self, dim):
        cfg = ModelConfig(input_dim=dim, num_classes=4, hidden_dims=(), embed_dim=dim)
        model = init_model(cfg, seed=0)
        model.layers[0][0].data[...] = np.eye(dim)
        model.layers[0][1].data[...] = 0.0
        return model

    def test_centroid_is_mean(self):
        model = self._identity_model(2)
        buf = self._buffer([[0.0, 0.0], [2.0, 2.0]], [1, 1])
        cents = ncm_centroids(buf, model)
        np.testing.assert_allclose(cents.means[0], [1.0, 1.0])
        assert list(cents.classes) == [1]

    def test_absent_class_has_no_centroid(self):
        model = self._identity_model(2)
        buf = self._buffer([[1.0, 0.0], [0.0, 1.0]], [0, 2])
        cents = ncm_centroids(buf, model)
        assert list(cents.classes) == [0, 2]

    def test_single_sample_centroid(self):
        model = self._identity_model(2)
        buf = self._buffer([[0.5, -0.5]], [3])
        cents = ncm_centroids(buf, model)
        np.testing.assert_allclose(cents.means[0], [0.5, -0.5])

    def test_empty_buffer_rejected(self):
        model = self._identity_model(2)
        with pytest.raises(ValueError, match="empty"):
            ncm_centroids(MemoryBuffer(4), model)

    def test_exact_centroid_predicts_its_class(self):
        cents = Centroids(classes=np.asarray([2, 5]),
                          means=np.asarray([[1.0, 1.0], [-1.0, 3.0]]),
                          counts=np.asarray([3, 3]))
        preds = ncm_predict_embeddings(np.asarray([[-1.0, 3.0]]), cents)
        assert preds[0] == 5

    def test_nearest_centroid_geometry(self):
        cents = Centroids(classes=np.asarray([0, 1]),
                          means=np.asarray([[0.0, 0.0], [4.0, 0.0]]),
                          counts=np.asarray([1, 1]))
        assert ncm_predict_embeddings(np.asarray([[1.0, 0.0]]), cents)[0] == 0

    def test_tie_breaks_to_lowest_class(self):
        cents = Centroids(classes=np.asarray([1, 3]),
                          means=np.asarray([[0.0, 0.0], [2.0, 0.0]]),
                          counts=np.asarray([1, 1]))
        assert ncm_predict_embeddings(np.asarray([[1.0, 0.0]]), cents)[0] == 1

    def test_translation_invariance(self):
        rng = np.random.default_rng(9)
        z = rng.uniform(-2, 2, (10, 3))
        means = rng.uniform(-2, 2, (4, 3))
        cents = Centroids(classes=np.arange(4), means=means, counts=np.full(4, 2))
        shift = rng.uniform(-5, 5, 3)
        shifted = Centroids(classes=np.arange(4), means=means + shift, counts=np.full(4, 2))
        np.testing.assert_array_equal(
            ncm_predict_embeddings(z, cents),
            ncm_predict_embeddings(z + shift, shifted))


class TestLinearLogits:
    def test_plain_dot_product(self):
        z = Tensor([[1.0, 2.0]])
        w = Tensor([[3.0, 4.0], [0.5, -1.0]])
        np.testing.assert_allclose(linear_logits(z, w).data, [[11.0, -1.5]])


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = init_model(CFG, seed=123)
        model.smoother_raw.data[...] = 0.37
        path = tmp_path / "model.ckpt"
        save_model(model, path)
        loaded = load_model(path, CFG)
        for a, b in zip(model.trainables(), loaded.trainables()):
            np.testing.assert_array_equal(a.data, b.data)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTMODEL" + b"\x00" * 32)
        with pytest.raises(ValueError, match="not a model checkpoint"):
            load_model(path, CFG)

    def test_truncated_payload_rejected(self, tmp_path):
        model = init_model(CFG, seed=1)
        path = tmp_path / "model.ckpt"
        save_model(model, path)
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(ValueError, match="truncated"):
            load_model(path, CFG)
