"""Training objectives: contrastive retrieval, rewrite alignment, generation.

All losses are differentiable scalar tensors built from autodiff primitives,
so the finite-difference checker can vet each one end to end through the
model. The combination rule weighs retrieval terms against the generation
term: total = (1 - lambda_g) * (ccl + lambda_igl * igl) + lambda_g * gen.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

ScalarLike = Union[Tensor, float]


@dataclass
class LossWeights:
    lambda_igl: float = 1.0
    lambda_g: float = 0.2
    tau: float = 0.05

    def validate(self) -> None:
        if self.lambda_igl < 0:
            raise ValueError("lambda_igl must be >= 0")
        if not 0.0 <= self.lambda_g <= 1.0:
            raise ValueError("lambda_g must be in [0, 1]")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


@dataclass
class LossBreakdown:
    l_ccl: float
    l_igl: float
    l_g: float
    l_total: float

    def identity_residual(self, weights: LossWeights) -> float:
        """Distance between the logged total and the combination formula."""
        expected = (
            (1.0 - weights.lambda_g) * (self.l_ccl + weights.lambda_igl * self.l_igl)
            + weights.lambda_g * self.l_g
        )
        return abs(self.l_total - expected)


def _ensure_vector(e, name: str) -> Tensor:
    if isinstance(e, Tensor):
        t = e
    else:
        arr = np.asarray(e)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        t = Tensor(arr)
    if t.ndim != 1:
        raise ShapeError(f"{name} must be a 1-D embedding, got shape {t.shape}")
    return t


def l2_normalize(e: Tensor) -> Tensor:
    """Unit-length rescaling; rejects the zero vector."""
    norm_sq = float((e.data * e.data).sum())
    if norm_sq == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return e * ad.power(ad.tsum(e * e), -0.5)


def cosine_sim(a, b) -> Tensor:
    """cos(a, b) as a differentiable scalar; errors on zero vectors."""
    ta = _ensure_vector(a, "a")
    tb = _ensure_vector(b, "b")
    if ta.shape != tb.shape:
        raise ShapeError(f"dimension mismatch: {ta.shape} vs {tb.shape}")
    return ad.tsum(l2_normalize(ta) * l2_normalize(tb))


def ccl_loss(
    e_query,
    e_positive,
    e_negatives: Sequence,
    tau: float,
    normalized: bool = True,
) -> Tensor:
    """Contrastive loss over one query, its gold passage and negatives.

    Softmax over similarity/tau with the gold in slot 0; `normalized` selects
    cosine similarity (default) versus a raw dot product.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    negatives = list(e_negatives)
    if not negatives:
        raise ValueError("need at least one negative passage")
    e_q = _ensure_vector(e_query, "query embedding")
    candidates = [_ensure_vector(e_positive, "positive embedding")]
    candidates += [_ensure_vector(n, f"negative {i}") for i, n in enumerate(negatives)]
    for c in candidates:
        if c.shape != e_q.shape:
            raise ShapeError(f"dimension mismatch: {c.shape} vs {e_q.shape}")
    if normalized:
        e_q = l2_normalize(e_q)
        candidates = [l2_normalize(c) for c in candidates]
    sims = [ad.tsum(e_q * c) for c in candidates]
    logits = ad.reshape(ad.concat([ad.reshape(s, (1,)) for s in sims]), (1, -1))
    log_probs = ad.log_softmax(logits * (1.0 / tau))
    picked = ad.take_per_row(log_probs, np.array([0]))
    return -ad.reshape(picked, ())


def igl_loss(e_query, e_target) -> Tensor:
    """Squared Euclidean distance pulling the in-context query embedding
    toward the embedding of its self-contained rewrite."""
    e_q = _ensure_vector(e_query, "query embedding")
    e_t = _ensure_vector(e_target, "rewrite embedding")
    if e_q.shape != e_t.shape:
        raise ShapeError(f"dimension mismatch: {e_q.shape} vs {e_t.shape}")
    diff = e_q - e_t
    return ad.tsum(diff * diff)


def gen_loss(logits: Tensor, target_ids, response_mask) -> Tensor:
    """Teacher-forced next-token loss over the masked response positions.

    response_mask[j] marks positions whose token is a prediction target; the
    prediction for position j comes from logits[j - 1]. Mean NLL over the
    masked positions.
    """
    mask = np.asarray(response_mask, dtype=bool)
    targets = np.asarray(target_ids)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (time, vocab), got {logits.shape}")
    if mask.shape[0] != logits.shape[0] or targets.shape[0] != logits.shape[0]:
        raise ShapeError("logits, target_ids and response_mask lengths differ")
    positions = np.flatnonzero(mask)
    if positions.size == 0:
        raise ValueError("response mask selects no positions")
    if positions[0] == 0:
        raise ValueError("position 0 has no preceding logits to predict from")
    rows = ad.gather_rows(logits, positions - 1)
    log_probs = ad.log_softmax(rows)
    picked = ad.take_per_row(log_probs, targets[positions])
    return -ad.tmean(picked)


def combined_loss(l_ccl: ScalarLike, l_igl: ScalarLike, l_g: ScalarLike,
                  weights: LossWeights) -> ScalarLike:
    """Weighted total; works on tensors inside the graph or on plain floats."""
    weights.validate()
    retrieval = l_ccl + weights.lambda_igl * l_igl
    return (1.0 - weights.lambda_g) * retrieval + weights.lambda_g * l_g
