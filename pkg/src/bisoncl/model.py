"""Feature extractor, cosine-normalized classifier heads, and NCM inference.

The trainable state is an MLP extractor shared by two same-shape classifier
heads (one fed by stream batches, one by buffer batches), two per-head logit
scales, and a raw scalar whose sigmoid smooths the training separation
between the heads. Inference for replay methods uses nearest-class-mean over
raw (unnormalized) embeddings of the buffered samples.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class ModelConfig:
    input_dim: int
    num_classes: int
    hidden_dims: tuple = (128, 64)
    embed_dim: int = 32
    scale_init: float = 10.0

    def __post_init__(self):
        if self.input_dim < 1 or self.num_classes < 1 or self.embed_dim < 1:
            raise ValueError("input_dim, num_classes and embed_dim must be >= 1")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden layer widths must be >= 1")


class ModelState:
    """All trainables: extractor layers, both heads, logit scales, smoother.

    Single-owner: clone per concurrent run. ``smoother_raw`` is stored raw;
    its sigmoid is applied functionally at every use and is reset to 0 at
    each task boundary by the training methods.
    """

    def __init__(self, config: ModelConfig, layers, w_stream, w_buffer,
                 scale_stream, scale_buffer, smoother_raw):
        self.config = config
        self.layers = layers  # list of (weight in x out, bias out) Tensor pairs
        self.w_stream = w_stream
        self.w_buffer = w_buffer
        self.scale_stream = scale_stream
        self.scale_buffer = scale_buffer
        self.smoother_raw = smoother_raw

    def separation_smoother(self) -> Tensor:
        """Sigmoid of the raw smoother scalar, kept in (0, 1)."""
        return T.sigmoid(self.smoother_raw)

    def reset_smoother(self) -> None:
        self.smoother_raw.data[...] = 0.0
        self.smoother_raw.grad = None

    def trainables(self) -> list[Tensor]:
        out = []
        for w, b in self.layers:
            out.extend([w, b])
        out.extend([self.w_stream, self.w_buffer,
                    self.scale_stream, self.scale_buffer, self.smoother_raw])
        return out

    def extractor_params(self) -> list[Tensor]:
        out = []
        for w, b in self.layers:
            out.extend([w, b])
        return out

    def clone(self) -> "ModelState":
        def cp(t: Tensor) -> Tensor:
            return Tensor(t.data.copy(), requires_grad=True)

        return ModelState(
            self.config,
            [(cp(w), cp(b)) for w, b in self.layers],
            cp(self.w_stream), cp(self.w_buffer),
            cp(self.scale_stream), cp(self.scale_buffer), cp(self.smoother_raw))


def init_model(config: ModelConfig, seed: int) -> ModelState:
    """Seeded init: uniform Kaiming-style fan-in weights U(+-sqrt(6/fan_in)),
    zero biases, logit scales at ``scale_init``, smoother raw at 0."""
    rng = np.random.default_rng(seed)
    dims = [config.input_dim, *config.hidden_dims, config.embed_dim]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
        b = Tensor(np.zeros(fan_out), requires_grad=True)
        layers.append((w, b))
    head_bound = np.sqrt(6.0 / config.embed_dim)
    w_stream = Tensor(rng.uniform(-head_bound, head_bound,
                                  size=(config.num_classes, config.embed_dim)),
                      requires_grad=True)
    w_buffer = Tensor(rng.uniform(-head_bound, head_bound,
                                  size=(config.num_classes, config.embed_dim)),
                      requires_grad=True)
    scale_stream = Tensor(np.float64(config.scale_init), requires_grad=True)
    scale_buffer = Tensor(np.float64(config.scale_init), requires_grad=True)
    smoother_raw = Tensor(np.float64(0.0), requires_grad=True)
    return ModelState(config, layers, w_stream, w_buffer,
                      scale_stream, scale_buffer, smoother_raw)


def extractor_forward(x, model: ModelState) -> Tensor:
    """MLP forward: ReLU between layers, no activation after the last."""
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if t.data.ndim != 2 or t.shape[1] != model.config.input_dim:
        raise ValueError(
            f"extractor_forward: expected (n, {model.config.input_dim}), got {t.shape}")
    n_layers = len(model.layers)
    for i, (w, b) in enumerate(model.layers):
        t = T.add(T.matmul(t, w), b)
        if i < n_layers - 1:
            t = T.relu(t)
    return t


def embed(x: np.ndarray, model: ModelState) -> np.ndarray:
    """Extractor output as a plain array (inference path, no grad use)."""
    return extractor_forward(x, model).data


def cosine_logits(z: Tensor, weights: Tensor, logit_scale: Tensor) -> Tensor:
    """Scaled cosine logits: scale * cos(weights[j], z[i]) for all pairs."""
    return T.mul(T.cosine_matrix(z, weights), logit_scale)


def linear_logits(z: Tensor, weights: Tensor) -> Tensor:
    """Plain dot-product logits for the single-head baselines."""
    return T.matmul(z, T.transpose(weights))


@dataclass
class Centroids:
    """Per-class mean embeddings; only classes present in the buffer appear."""

    classes: np.ndarray  # sorted class ids, shape (m,)
    means: np.ndarray    # shape (m, embed_dim)
    counts: np.ndarray   # shape (m,)


def ncm_centroids(buffer, model: ModelState) -> Centroids:
    """Mean raw embedding per class over everything currently buffered."""
    if len(buffer) == 0:
        raise ValueError("ncm_centroids: buffer is empty")
    feats, labels = buffer.contents()
    z = embed(feats, model)
    classes = np.unique(labels)
    means = np.empty((classes.size, z.shape[1]))
    counts = np.empty(classes.size, dtype=np.int64)
    for i, c in enumerate(classes):
        sel = labels == c
        counts[i] = int(np.sum(sel))
        means[i] = z[sel].mean(axis=0)
    return Centroids(classes=classes, means=means, counts=counts)


def ncm_predict_embeddings(z: np.ndarray, centroids: Centroids) -> np.ndarray:
    """Nearest-centroid labels by Euclidean distance; ties go to the lowest
    class index (centroid classes are sorted)."""
    if centroids.classes.size == 0:
        raise ValueError("ncm_predict: no centroids available")
    d2 = np.sum((z[:, None, :] - centroids.means[None, :, :]) ** 2, axis=2)
    return centroids.classes[np.argmin(d2, axis=1)]


def ncm_predict(x: np.ndarray, centroids: Centroids, model: ModelState) -> np.ndarray:
    return ncm_predict_embeddings(embed(x, model), centroids)


# ---------------------------------------------------------------------------
# checkpoint format
#
# Flat little-endian binary:
#   magic   8 bytes  b"OCILCKPT"
#   version u32      currently 1
#   count   u32      number of arrays
#   then per array:
#     name_len u16, name utf-8, ndim u8, dims int64 x ndim
#   then all payloads, float64 little-endian, in header order.

_MAGIC = b"OCILCKPT"
_VERSION = 1


def _named_arrays(model: ModelState) -> list[tuple[str, np.ndarray]]:
    arrays = []
    for i, (w, b) in enumerate(model.layers):
        arrays.append((f"layer{i}.weight", w.data))
        arrays.append((f"layer{i}.bias", b.data))
    arrays.append(("w_stream", model.w_stream.data))
    arrays.append(("w_buffer", model.w_buffer.data))
    arrays.append(("scale_stream", model.scale_stream.data))
    arrays.append(("scale_buffer", model.scale_buffer.data))
    arrays.append(("smoother_raw", model.smoother_raw.data))
    return arrays


def save_model(model: ModelState, path) -> None:
    arrays = _named_arrays(model)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(arrays)))
        for name, arr in arrays:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<q", d))
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path, config: ModelConfig) -> ModelState:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        headers = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            dims = struct.unpack(f"<{ndim}q", fh.read(8 * ndim)) if ndim else ()
            headers.append((name, dims))
        arrays = {}
        for name, dims in headers:
            n = int(np.prod(dims)) if dims else 1
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise ValueError(f"{path}: truncated payload for {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(dims)

    model = init_model(config, seed=0)
    expected = [name for name, _ in _named_arrays(model)]
    missing = [n for n in expected if n not in arrays]
    if missing:
        raise ValueError(f"{path}: checkpoint missing arrays {missing}")
    for (name, _), target in zip(_named_arrays(model), _model_slots(model)):
        if arrays[name].shape != target.data.shape:
            raise ValueError(
                f"{path}: {name} shape {arrays[name].shape} != expected {target.data.shape}")
        target.data = arrays[name].copy()
    return model


def _model_slots(model: ModelState) -> list[Tensor]:
    slots = []
    for w, b in model.layers:
        slots.extend([w, b])
    slots.extend([model.w_stream, model.w_buffer,
                  model.scale_stream, model.scale_buffer, model.smoother_raw])
    return slots
