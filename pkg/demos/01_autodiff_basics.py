"""A walk through the reverse-mode autodiff core.

Builds a small expression graph out of the primitive ops, backpropagates,
and cross-checks one gradient against central finite differences.

Run:  python3 demos/01_autodiff_basics.py
"""

import numpy as np

from adsnn.tensor import Tensor, backward, matmul, relu, tensor_sum

rng = np.random.default_rng(0)

# Leaves: a 4x3 input and a 3x2 weight, both tracked for gradients.
x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)

# A tiny computation: scalar loss = sum(relu(x @ w)).
loss = tensor_sum(relu(matmul(x, w)))
backward(loss)

print("loss                 :", float(loss.data))
print("dloss/dw (autodiff)  :")
print(w.grad)

# The same derivative by central finite differences, one entry at a time.
def loss_at(weight: np.ndarray) -> float:
    return float(np.sum(np.maximum(x.data @ weight, 0.0)))

step = 1e-6
fd = np.zeros_like(w.data)
for i in range(w.data.shape[0]):
    for j in range(w.data.shape[1]):
        bumped = w.data.copy()
        bumped[i, j] += step
        up = loss_at(bumped)
        bumped[i, j] -= 2 * step
        down = loss_at(bumped)
        fd[i, j] = (up - down) / (2 * step)

print("dloss/dw (finite diff):")
print(fd)
worst = np.max(np.abs(w.grad - fd))
print(f"largest disagreement : {worst:.3e}")
assert worst < 1e-6
print("autodiff and finite differences agree.")
