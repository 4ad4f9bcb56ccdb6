"""A tour of the tensor core: build a graph, backpropagate, verify numerically.

Run:  python demos/01_autodiff_basics.py
"""

import numpy as np

from kgfuse import tensor as T

# Forward: a two-layer MLP-ish scalar objective.
rng = np.random.default_rng(0)
x = T.Tensor(rng.standard_normal((4, 3)))
w1 = T.Tensor(rng.standard_normal((3, 5)), requires_grad=True)
w2 = T.Tensor(rng.standard_normal((5, 1)), requires_grad=True)

hidden = T.gelu(T.matmul(x, w1))
loss = T.tensor_mean(T.power(T.matmul(hidden, w2), 2.0))
print(f"loss = {loss.item():.6f}")

# Reverse: one call gives gradients for every requires_grad leaf.
grads = T.backward(loss)
print(f"|grad w1| = {np.linalg.norm(grads[w1]):.6f}")
print(f"|grad w2| = {np.linalg.norm(grads[w2]):.6f}")

# The validation harness perturbs sampled scalars and compares.
params = T.Parameters()
params.add("w1", w1)
params.add("w2", w2)


def objective():
    h = T.gelu(T.matmul(x, params["w1"]))
    return T.tensor_mean(T.power(T.matmul(h, params["w2"]), 2.0))


err = T.finite_difference_check(objective, params, eps=1e-4,
                                sample_count=20, seed=1)
print(f"max relative error vs central differences: {err:.2e}")

# Fan-out: a tensor feeding two consumers accumulates both contributions.
v = T.Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
self_grads = T.backward(T.dot(v, v))
print(f"d(v.v)/dv = {self_grads[v]}  (equals 2v)")
