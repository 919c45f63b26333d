"""Dense float64 tensors with reverse-mode automatic differentiation.

Every tensor op that sees a grad-requiring input records a node holding the
input references and a local gradient rule. ``backward`` linearizes the
recorded graph into a :class:`Tape` (topological order, each node visited
exactly once) and accumulates gradients into the leaves.

Broadcasting is deliberately narrow: scalar-against-tensor and row-vector-
against-matrix only. Row-indexed helpers (``div_rows``, ``gather_rows``)
cover the remaining patterns with explicit, auditable gradient rules.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class Node:
    """One recorded operation: inputs plus the rule mapping the output
    gradient to per-input gradients (``None`` for inputs that do not
    require grad)."""

    __slots__ = ("inputs", "grad_fn", "name")

    def __init__(self, inputs: tuple["Tensor", ...], grad_fn: Callable, name: str):
        self.inputs = inputs
        self.grad_fn = grad_fn
        self.name = name


class Tensor:
    """A dense n-dimensional float64 value, optionally tracked for autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are promoted to constant tensors
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self) -> "Tensor":
        return scale(reduce_sum(self), 1.0 / self.data.size)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, inputs: tuple, grad_fn: Callable, name: str) -> Tensor:
    out = Tensor(data)
    if any(t.requires_grad or t.node is not None for t in inputs):
        out.requires_grad = True
        out.node = Node(inputs, grad_fn, name)
    return out


# ---------------------------------------------------------------------------
# broadcasting support (scalar and row-vector only)

def _broadcast_ok(a: np.ndarray, b: np.ndarray) -> bool:
    if a.shape == b.shape:
        return True
    if a.size == 1 or b.size == 1:
        return True
    # row vector against matrix: (m,) or (1, m) against (n, m)
    for x, y in ((a, b), (b, a)):
        if y.ndim == 2 and (x.shape == (y.shape[1],) or x.shape == (1, y.shape[1])):
            return True
    return False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    if shape == () or np.prod(shape) == 1:
        return np.sum(grad).reshape(shape)
    # shape is (m,) or (1, m), grad is (n, m)
    g = np.sum(grad, axis=0)
    return g.reshape(shape)


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if not _broadcast_ok(a.data, b.data):
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "add")

    def grad_fn(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _make(a.data + b.data, (a, b), grad_fn, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "sub")

    def grad_fn(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _make(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "mul")

    def grad_fn(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _make(a.data * b.data, (a, b), grad_fn, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "div")

    def grad_fn(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = (_unbroadcast(-g * a.data / (b.data * b.data), b.shape)
              if b.requires_grad else None)
        return (ga, gb)

    return _make(a.data / b.data, (a, b), grad_fn, "div")


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a plain (non-trainable) scalar."""
    c = float(c)

    def grad_fn(g):
        return (g * c if a.requires_grad else None,)

    return _make(a.data * c, (a,), grad_fn, "scale")


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def grad_fn(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _make(a.data @ b.data, (a, b), grad_fn, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"transpose: expected a matrix, got shape {a.shape}")

    def grad_fn(g):
        return (g.T if a.requires_grad else None,)

    return _make(a.data.T.copy(), (a,), grad_fn, "transpose")


def gather_rows(a: Tensor, indices: Sequence[int]) -> Tensor:
    """Select rows of a matrix; the gradient scatter-adds back."""
    if a.data.ndim != 2:
        raise ValueError(f"gather_rows: expected a matrix, got shape {a.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= a.shape[0])):
        raise ValueError(f"gather_rows: indices out of range for {a.shape[0]} rows")

    def grad_fn(g):
        if not a.requires_grad:
            return (None,)
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx].copy(), (a,), grad_fn, "gather_rows")


def pick_labels(a: Tensor, labels) -> Tensor:
    """Select one column per row: out[i] = a[i, labels[i]].

    Keeps -inf entries in unselected columns out of the result entirely
    (multiplying by a one-hot would turn them into nan).
    """
    if a.data.ndim != 2:
        raise ValueError(f"pick_labels: expected a matrix, got shape {a.shape}")
    idx = np.asarray(labels, dtype=np.intp)
    n = a.shape[0]
    if idx.shape != (n,):
        raise ValueError(f"pick_labels: {idx.shape} labels for {n} rows")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise ValueError(f"pick_labels: labels out of range for {a.shape[1]} columns")
    rows = np.arange(n)

    def grad_fn(g):
        if not a.requires_grad:
            return (None,)
        out = np.zeros_like(a.data)
        out[rows, idx] = g
        return (out,)

    return _make(a.data[rows, idx].copy(), (a,), grad_fn, "pick_labels")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    datas = [t.data for t in tensors]
    ref = datas[0].shape
    for d in datas[1:]:
        if d.ndim != len(ref) or any(
                i != axis and d.shape[i] != ref[i] for i in range(d.ndim)):
            raise ValueError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        grads = []
        for i, t in enumerate(tensors):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offsets[i], offsets[i + 1])
                grads.append(g[tuple(sl)])
            else:
                grads.append(None)
        return tuple(grads)

    return _make(np.concatenate(datas, axis=axis), tuple(tensors), grad_fn, "concat")


# ---------------------------------------------------------------------------
# nonlinearities

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def grad_fn(g):
        return (g * mask if a.requires_grad else None,)

    return _make(np.where(mask, a.data, 0.0), (a,), grad_fn, "relu")


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_np(a.data)

    def grad_fn(g):
        return (g * out * (1.0 - out) if a.requires_grad else None,)

    return _make(out, (a,), grad_fn, "sigmoid")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # evaluate on the non-overflowing branch for each sign
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def grad_fn(g):
        return (g * out if a.requires_grad else None,)

    return _make(out, (a,), grad_fn, "exp")


def log(a: Tensor) -> Tensor:
    def grad_fn(g):
        return (g / a.data if a.requires_grad else None,)

    return _make(np.log(a.data), (a,), grad_fn, "log")


# ---------------------------------------------------------------------------
# reductions and row-wise helpers

def reduce_sum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    def grad_fn(g):
        if not a.requires_grad:
            return (None,)
        if axis is None:
            return (np.full_like(a.data, float(g)),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), grad_fn, "sum")


def mean(a: Tensor) -> Tensor:
    return a.mean()


def div_rows(a: Tensor, s: Tensor) -> Tensor:
    """Divide each row of a matrix by a per-row scalar (shape (n,) or (n,1))."""
    if a.data.ndim != 2:
        raise ValueError(f"div_rows: expected a matrix, got shape {a.shape}")
    sd = s.data.reshape(-1)
    if sd.shape[0] != a.shape[0]:
        raise ValueError(f"div_rows: {s.shape} does not match {a.shape[0]} rows")
    col = sd[:, None]

    def grad_fn(g):
        ga = g / col if a.requires_grad else None
        gs = None
        if s.requires_grad:
            gs = (-np.sum(g * a.data, axis=1) / (sd * sd)).reshape(s.shape)
        return (ga, gs)

    return _make(a.data / col, (a, s), grad_fn, "div_rows")


def row_l2_norm(a: Tensor, floor: float = 0.0) -> Tensor:
    """Per-row Euclidean norm, shape (n, 1); optionally clamped from below."""
    if a.data.ndim != 2:
        raise ValueError(f"row_l2_norm: expected a matrix, got shape {a.shape}")
    raw = np.sqrt(np.sum(a.data * a.data, axis=1, keepdims=True))
    out = np.maximum(raw, floor)
    active = raw > floor  # no gradient once the clamp engages

    def grad_fn(g):
        if not a.requires_grad:
            return (None,)
        safe = np.where(raw > 0, raw, 1.0)
        return (np.where(active, g / safe, 0.0) * a.data,)

    return _make(out, (a,), grad_fn, "row_l2_norm")


COSINE_NORM_FLOOR = 1e-12


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity between matching rows of two equal-shape matrices."""
    if a.shape != b.shape:
        raise ValueError(f"cosine_rows: shapes {a.shape} and {b.shape} differ")
    an = div_rows(a, row_l2_norm(a, COSINE_NORM_FLOOR))
    bn = div_rows(b, row_l2_norm(b, COSINE_NORM_FLOOR))
    return reduce_sum(mul(an, bn), axis=1)


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    """All-pairs cosine similarity: rows of ``a`` (n,d) against rows of ``b`` (m,d)."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"cosine_matrix: incompatible shapes {a.shape} and {b.shape}")
    an = div_rows(a, row_l2_norm(a, COSINE_NORM_FLOOR))
    bn = div_rows(b, row_l2_norm(b, COSINE_NORM_FLOOR))
    return matmul(an, transpose(bn))


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log-softmax, stabilized by max subtraction.

    Rows may contain -inf entries (masked classes); those positions get
    probability exactly 0 and propagate no gradient.
    """
    if a.data.ndim != 2:
        raise ValueError(f"log_softmax: expected a matrix, got shape {a.shape}")
    m = np.max(a.data, axis=1, keepdims=True)
    shifted = a.data - m
    e = np.exp(shifted)
    z = np.sum(e, axis=1, keepdims=True)
    probs = e / z

    def grad_fn(g):
        if not a.requires_grad:
            return (None,)
        return (g - probs * np.sum(g, axis=1, keepdims=True),)

    return _make(shifted - np.log(z), (a,), grad_fn, "log_softmax")


def softmax(a: Tensor) -> Tensor:
    return exp(log_softmax(a))


def stop_gradient(a: Tensor) -> Tensor:
    """Pass the value through; block all gradient flow to ``a``."""
    return Tensor(a.data.copy(), requires_grad=False)


# ---------------------------------------------------------------------------
# tape and backward

@dataclass
class Tape:
    """Topologically ordered list of graph tensors reachable from a root.

    ``nodes[i]``'s inputs all appear earlier in the list or are leaves, so a
    single reverse sweep visits every recorded operation exactly once.
    """

    nodes: list

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen or t.node is None:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for inp in t.node.inputs:
                if inp.node is not None and id(inp) not in seen:
                    stack.append((inp, False))
        return cls(order)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every grad-requiring leaf.

    Gradients add into any existing ``.grad`` (fan-out and repeated backward
    calls accumulate); ``sgd_step`` is the only thing that clears them.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = Tape.trace(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(tape.nodes):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        for inp, gi in zip(t.node.inputs, t.node.grad_fn(g)):
            if gi is None or not (inp.requires_grad or inp.node is not None):
                continue
            if inp.node is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                prev = grads.get(id(inp))
                grads[id(inp)] = gi if prev is None else prev + gi
    # a grad-requiring loss with no history is its own leaf
    if loss.node is None and loss.requires_grad:
        g = np.ones_like(loss.data)
        loss.grad = g if loss.grad is None else loss.grad + g


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class SgdConfig:
    """Plain stochastic gradient descent; ``learning_rate`` must be positive."""

    learning_rate: float = 0.1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")


def sgd_step(params: Sequence[Tensor], cfg: SgdConfig) -> None:
    """Descend each parameter by lr * grad, then clear the gradients.

    A parameter with no accumulated gradient signals a broken graph and is
    rejected; callers pass exactly the parameters that participated.
    """
    for p in params:
        if p.grad is None:
            raise ValueError("sgd_step: parameter has no gradient (broken graph?)")
        if p.grad.shape != p.data.shape:
            raise ValueError(
                f"sgd_step: gradient shape {p.grad.shape} != parameter shape {p.data.shape}")
    for p in params:
        p.data -= cfg.learning_rate * p.grad
        p.grad = None


# ---------------------------------------------------------------------------
# finite-difference oracle

def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per coordinate is |analytic - numeric| / max(1, |analytic|).
    ``f`` must be deterministic.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    leaf = Tensor(x.data.copy(), requires_grad=True)
    loss = f(leaf)
    backward(loss)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)

    numeric = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(leaf.data.copy())).item()
        flat[i] = orig - eps
        lo = f(Tensor(leaf.data.copy())).item()
        flat[i] = orig
        num_flat[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0


def finite_diff_check_params(f: Callable[[], Tensor], params: Sequence[Tensor],
                             eps: float = 1e-5) -> float:
    """Like :func:`finite_diff_check` but perturbs a set of existing parameter
    tensors in place; ``f`` closes over them and rebuilds the graph per call."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    for p in params:
        p.grad = None
    backward(f())
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f().item()
            flat[i] = orig - eps
            lo = f().item()
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            err = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]))
            worst = max(worst, err)
        p.grad = None
    return worst
