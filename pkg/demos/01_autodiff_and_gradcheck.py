"""Tour of the tensor engine: forward ops, backward pass, gradient checking.

Run: python demos/01_autodiff_and_gradcheck.py
"""

import numpy as np

from convsearch import autodiff as ad
from convsearch.autodiff import Tensor, finite_difference_check
from convsearch.checks import check_core_ops

print("== scalar chain rule ==")
x = Tensor(np.asarray(3.0), requires_grad=True)
y = x * x + 2.0 * x
y.backward()
print(f"d/dx (x^2 + 2x) at x=3  ->  {x.grad}  (expected 8)")

print("\n== softmax over a batch of rows ==")
logits = Tensor(np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]))
probs = ad.softmax(logits)
print(probs.data.round(4), "row sums:", probs.data.sum(axis=1))

print("\n== layer norm sends constant rows to zero ==")
print(ad.layer_norm(Tensor(np.full((2, 4), 9.0))).data)

print("\n== finite differences vs a hand-built loss ==")
params = {"w": Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True,
                      dtype=np.float64)}


def loss_fn(p):
    return ad.tsum(ad.exp(p["w"]) * p["w"])


report = finite_difference_check(loss_fn, params, epsilon=1e-5, op_name="exp-weighted sum")
print(report)

print("\n== sweep over every registered op ==")
for r in check_core_ops(points=3):
    print(r)
