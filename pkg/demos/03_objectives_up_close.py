"""The three training objectives on concrete numbers.

Contrastive retrieval pulls the query embedding toward its gold passage,
rewrite alignment pulls it toward the embedding of the self-contained query,
and the generation term keeps next-token prediction alive. The combined
total is (1 - lambda_g) * (ccl + lambda_igl * igl) + lambda_g * gen.

Run: python demos/03_objectives_up_close.py
"""

import math

import numpy as np

from convsearch.autodiff import Tensor
from convsearch.losses import (
    LossWeights, ccl_loss, combined_loss, cosine_sim, gen_loss, igl_loss,
)

print("== cosine similarity ==")
print("orthogonal:", cosine_sim([1.0, 0.0], [0.0, 1.0]).item())
print("collinear :", cosine_sim([1.0, 2.0], [2.0, 4.0]).item())

print("\n== contrastive loss ==")
e_q = np.array([1.0, 0.0])
print("indifferent (all sims equal, 3 negatives):",
      round(ccl_loss([1.0, 0, 0], [0, 1.0, 0], [[0, 0, 1.0]] * 3, tau=1.0).item(), 6),
      "= ln 4 =", round(math.log(4), 6))
sharp = ccl_loss(e_q, e_q, [[0.0, 1.0]], tau=0.05).item()
print(f"aligned positive at tau=0.05: {sharp:.2e} (low temperature separates hard)")

print("\n== rewrite alignment ==")
print("identical embeddings:", igl_loss([1.0, 2.0], [1.0, 2.0]).item())
print("hand case [1,2] vs [1,0]:", igl_loss([1.0, 2.0], [1.0, 0.0]).item())

print("\n== generation loss ==")
vocab = 7
logits = Tensor(np.zeros((4, vocab)))
targets = np.array([0, 5, 2, 1])
mask = np.array([False, True, True, True])
print("uniform logits:", round(gen_loss(logits, targets, mask).item(), 6),
      "= ln 7 =", round(math.log(7), 6))

print("\n== combined objective ==")
weights = LossWeights(lambda_igl=1.0, lambda_g=0.2)
print("ccl=1.0 igl=0.5 gen=2.0 ->", combined_loss(1.0, 0.5, 2.0, weights))
