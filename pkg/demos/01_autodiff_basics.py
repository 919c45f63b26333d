"""Tour of the tensor core: taped ops, backward, and the finite-difference
oracle that every loss in the package is checked against.

Run:  python demos/01_autodiff_basics.py
"""

import numpy as np

from bisoncl import tensor as T
from bisoncl.tensor import SgdConfig, Tensor, backward, finite_diff_check, sgd_step

rng = np.random.default_rng(0)

# --- a tiny computation graph ------------------------------------------------
# Ops record themselves when an input requires grad; backward replays the
# tape once, accumulating into the leaves.
w = Tensor(rng.uniform(-1, 1, (3, 2)), requires_grad=True)
x = Tensor(rng.uniform(-1, 1, (4, 3)))
logits = T.matmul(x, w)
loss = T.reduce_sum(T.mul(T.sigmoid(logits), logits))
backward(loss)
print("loss:", loss.item())
print("dloss/dw:\n", w.grad)

# --- the finite-difference oracle --------------------------------------------
# Central differences with eps=1e-5; reported as max relative error over
# coordinates. This is the same oracle the acceptance suite sweeps across
# every trainable parameter of every loss.
def f(t):
    return T.reduce_sum(T.mul(T.sigmoid(T.matmul(x, t)), T.matmul(x, t)))

err = finite_diff_check(f, Tensor(w.data.copy()), eps=1e-5)
print(f"finite-difference max rel err: {err:.3e}")

# --- stop-gradient ------------------------------------------------------------
# Values pass through; gradients do not. The buffer-head alignment loss uses
# this to treat the stream head as a fixed teacher.
a = Tensor(2.0, requires_grad=True)
b = Tensor(5.0, requires_grad=True)
backward(T.mul(T.stop_gradient(a), b))
print("grad through stop_gradient:", a.grad, "| live branch:", b.grad)

# --- one SGD step -------------------------------------------------------------
p = Tensor(np.asarray([1.0, 1.0]), requires_grad=True)
p.grad = np.asarray([1.0, -1.0])
sgd_step([p], SgdConfig(learning_rate=0.1))
print("after sgd step:", p.data, "grad cleared:", p.grad is None)

# --- cosine similarity is scale invariant --------------------------------------
u = Tensor(rng.uniform(-1, 1, (2, 5)))
v = Tensor(rng.uniform(-1, 1, (2, 5)))
base = T.cosine_rows(u, v).data
scaled = T.cosine_rows(Tensor(7.3 * u.data), Tensor(0.02 * v.data)).data
print("cosine drift under rescaling:", np.max(np.abs(base - scaled)))
