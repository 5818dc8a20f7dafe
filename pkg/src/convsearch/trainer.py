"""Training loop for the combined retrieval objective.

Each step embeds the batch's dialogues, candidate passages and rewrite
targets with the current model, assembles the weighted loss, and applies an
Adam update. Ablation flags drop the rewrite-alignment and generation terms;
the contrastive term is mandatory. Runs are bitwise reproducible for a fixed
(seed, config, corpus).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import NumericsError, Tensor
from .corpus import Conversation, Passage
from .evaluator import EvalReport, evaluate_run, qrels_from_conversations
from .index import build_store
from .losses import (
    LossBreakdown,
    LossWeights,
    ccl_loss,
    combined_loss,
    gen_loss,
    igl_loss,
    l2_normalize,
)
from .model import (
    ModelConfig,
    forward_batch,
    init_params,
    pool_span_batch,
    save_checkpoint,
)
from .querytypes import POOLING_MODES, run_retrieval
from .sampler import SAMPLING_MODES, Batch, build_epoch, sample_instance
from .tokenizer import PAD, Vocab, encode_passage


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, breakdown: LossBreakdown):
        super().__init__(
            f"non-finite loss at step {step}:"
            f" ccl={breakdown.l_ccl} igl={breakdown.l_igl} g={breakdown.l_g}"
        )
        self.step = step
        self.breakdown = breakdown


@dataclass
class AblationFlags:
    ccl_on: bool = True
    igl_on: bool = True
    gen_on: bool = True

    def validate(self) -> None:
        if not self.ccl_on:
            raise ValueError("the contrastive retrieval objective cannot be disabled")


@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 24
    learning_rate: float = 1e-4
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    sampling_mode: str = "dynamic"
    k_rand: int = 4
    grad_clip: Optional[float] = None
    pooling_mode: str = "query_span"
    ccl_normalized: bool = True
    igl_normalized: bool = True
    igl_two_sided: bool = False

    def validate(self) -> None:
        self.weights.validate()
        self.ablation.validate()
        if self.sampling_mode not in SAMPLING_MODES:
            raise ValueError(f"unknown sampling mode {self.sampling_mode!r}")
        if self.pooling_mode not in POOLING_MODES:
            raise ValueError(f"unknown pooling mode {self.pooling_mode!r}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 1 or self.k_rand < 1:
            raise ValueError("epochs and k_rand must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class StepLog:
    step: int
    l_ccl: float
    l_igl: float
    l_g: float
    l_total: float
    grad_norm: float
    wall_ms: float
    lambda_igl: float
    lambda_g: float

    def breakdown(self) -> LossBreakdown:
        return LossBreakdown(self.l_ccl, self.l_igl, self.l_g, self.l_total)

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "l_ccl": self.l_ccl,
            "l_igl": self.l_igl,
            "l_g": self.l_g,
            "l_total": self.l_total,
            "grad_norm": self.grad_norm,
            "wall_ms": self.wall_ms,
            "lambda_igl": self.lambda_igl,
            "lambda_g": self.lambda_g,
        }


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


def init_adam_state(params: dict) -> AdamState:
    return AdamState(
        m={name: np.zeros_like(p.data) for name, p in params.items()},
        v={name: np.zeros_like(p.data) for name, p in params.items()},
    )


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    betas: tuple = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """Standard Adam update with bias correction, in place."""
    beta1, beta2 = betas
    state.t += 1
    correction1 = 1.0 - beta1 ** state.t
    correction2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ad.ShapeError(f"gradient shape {g.shape} != param shape {p.data.shape} for {name}")
        if not np.isfinite(g).all():
            raise NumericsError(f"non-finite gradient for parameter {name}")
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def global_grad_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        total += float((g.astype(np.float64) ** 2).sum())
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# one training step
# ---------------------------------------------------------------------------


def _pad_batch(sequences: Sequence[Sequence[int]]) -> np.ndarray:
    time = max(len(s) for s in sequences)
    ids = np.full((len(sequences), time), PAD, dtype=np.int64)
    for b, seq in enumerate(sequences):
        ids[b, : len(seq)] = seq
    return ids


def _stack_scalars(terms: Sequence[Tensor]) -> Tensor:
    return ad.tmean(ad.concat([ad.reshape(t, (1,)) for t in terms]))


def _row(matrix: Tensor, b: int, width: int) -> Tensor:
    return ad.reshape(ad.gather_rows(matrix, np.array([b])), (width,))


def _query_embeddings(batch: Batch, params: dict, config: ModelConfig,
                      pooling: str, dropout_rng) -> Tensor:
    dialogues = [inst.dialogue for inst in batch.instances]
    ids = _pad_batch([d.ids for d in dialogues])
    hidden, _ = forward_batch(ids, params, config, want_logits=False,
                              dropout_rng=dropout_rng)
    if pooling == "query_span":
        spans = [d.current_query_span for d in dialogues]
    else:
        spans = [(0, d.length) for d in dialogues]
    return pool_span_batch(hidden, spans)


def _candidate_embeddings(batch: Batch, passages_by_id: dict, vocab: Vocab,
                          params: dict, config: ModelConfig, dropout_rng):
    ordered: list = []
    for inst in batch.instances:
        if inst.positive_id not in ordered:
            ordered.append(inst.positive_id)
        for pid in inst.negative_ids:
            if pid not in ordered:
                ordered.append(pid)
    encoded = [encode_passage(passages_by_id[pid].text, vocab) for pid in ordered]
    ids = _pad_batch([e.ids for e in encoded])
    hidden, _ = forward_batch(ids, params, config, want_logits=False,
                              dropout_rng=dropout_rng)
    pooled = pool_span_batch(hidden, [e.content_span for e in encoded])
    return pooled, {pid: i for i, pid in enumerate(ordered)}


def _rewrite_embeddings(batch: Batch, params: dict, config: ModelConfig,
                        pooling: str, two_sided: bool, dropout_rng):
    rewrites = [inst.rewrite for inst in batch.instances]
    ids = _pad_batch([r.ids for r in rewrites])
    if pooling == "query_span":
        spans = [r.current_query_span for r in rewrites]
    else:
        spans = [(0, r.length) for r in rewrites]
    if two_sided:
        hidden, _ = forward_batch(ids, params, config, want_logits=False,
                                  dropout_rng=dropout_rng)
        return pool_span_batch(hidden, spans)
    with ad.no_grad():
        hidden, _ = forward_batch(ids, params, config, want_logits=False)
        return pool_span_batch(hidden, spans).detach()


def train_step(
    batch: Batch,
    passages_by_id: dict,
    vocab: Vocab,
    params: dict,
    model_config: ModelConfig,
    config: TrainConfig,
    dropout_rng=None,
    igl_targets: Optional[Tensor] = None,
):
    """Forward pass of one batch; returns (total_loss_tensor, component floats).

    igl_targets, when given, replaces the rewrite-embedding computation with a
    fixed (batch, d) target matrix; the gradient checker uses this to hold the
    stop-gradient branch constant under parameter perturbations.
    """
    d = model_config.d_model
    weights = config.weights
    lambda_igl_eff = weights.lambda_igl if config.ablation.igl_on else 0.0
    lambda_g_eff = weights.lambda_g if config.ablation.gen_on else 0.0
    effective = LossWeights(lambda_igl=lambda_igl_eff, lambda_g=lambda_g_eff,
                            tau=weights.tau)

    e_queries = _query_embeddings(batch, params, model_config,
                                  config.pooling_mode, dropout_rng)
    candidates, candidate_row = _candidate_embeddings(
        batch, passages_by_id, vocab, params, model_config, dropout_rng
    )

    ccl_terms = []
    for b, inst in enumerate(batch.instances):
        e_q = _row(e_queries, b, d)
        e_pos = _row(candidates, candidate_row[inst.positive_id], d)
        e_negs = [_row(candidates, candidate_row[pid], d) for pid in inst.negative_ids]
        ccl_terms.append(ccl_loss(e_q, e_pos, e_negs, weights.tau,
                                  normalized=config.ccl_normalized))
    l_ccl = _stack_scalars(ccl_terms)

    if config.ablation.igl_on:
        if igl_targets is not None:
            targets = igl_targets
        else:
            targets = _rewrite_embeddings(batch, params, model_config,
                                          config.pooling_mode, config.igl_two_sided,
                                          dropout_rng)
        igl_terms = []
        for b in range(batch.size):
            e_q = _row(e_queries, b, d)
            e_t = _row(targets, b, d)
            if config.igl_normalized:
                # unnormalized squared distances dwarf the contrastive term
                # and collapse the embedding space at this scale; on unit
                # vectors the distance is bounded by 4 and lives on the same
                # cosine geometry the retrieval loss shapes
                e_q = l2_normalize(e_q)
                e_t = l2_normalize(e_t)
            igl_terms.append(igl_loss(e_q, e_t))
        l_igl = _stack_scalars(igl_terms)
    else:
        l_igl = Tensor(np.zeros((), dtype=e_queries.dtype))

    if config.ablation.gen_on:
        gen_ids = _pad_batch([inst.gen_ids for inst in batch.instances])
        time = gen_ids.shape[1]
        _, logits = forward_batch(gen_ids, params, model_config, want_logits=True,
                                  dropout_rng=dropout_rng)
        gen_terms = []
        for b, inst in enumerate(batch.instances):
            row_logits = ad.reshape(ad.gather_rows(logits, np.array([b])),
                                    (time, model_config.vocab_size))
            mask = np.zeros(time, dtype=bool)
            mask[: len(inst.gen_mask)] = inst.gen_mask
            gen_terms.append(gen_loss(row_logits, gen_ids[b], mask))
        l_g = _stack_scalars(gen_terms)
    else:
        l_g = Tensor(np.zeros((), dtype=e_queries.dtype))

    total = combined_loss(l_ccl, l_igl, l_g, effective)
    components = (float(l_ccl.data), float(l_igl.data), float(l_g.data))
    return total, components, effective


@dataclass
class TrainResult:
    params: dict
    model_config: ModelConfig
    step_logs: list
    checkpoint_path: Optional[str] = None


def train(
    passages: Sequence[Passage],
    conversations: Sequence[Conversation],
    vocab: Vocab,
    model_config: ModelConfig,
    config: TrainConfig,
    checkpoint_path: Optional[str] = None,
    log_path: Optional[str] = None,
) -> TrainResult:
    """Optimize the combined objective; returns final parameters and step logs."""
    config.validate()
    model_config.validate()
    params = init_params(model_config, seed=config.seed)
    adam = init_adam_state(params)
    passages_by_id = {p.id: p for p in passages}
    step_logs: list = []
    step = 0

    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(config.epochs):
            rng = np.random.default_rng([config.seed, epoch])
            dropout_rng = (
                np.random.default_rng([config.seed, 7919, epoch])
                if model_config.dropout > 0 else None
            )
            batches = build_epoch(
                conversations, passages, vocab, rng,
                batch_size=config.batch_size,
                context_len=model_config.context_len,
                k_rand=config.k_rand,
                mode=config.sampling_mode,
            )
            for batch in batches:
                started = time.perf_counter()
                total, (v_ccl, v_igl, v_g), effective = train_step(
                    batch, passages_by_id, vocab, params, model_config, config,
                    dropout_rng,
                )
                logged_total = float(combined_loss(v_ccl, v_igl, v_g, effective))
                breakdown = LossBreakdown(v_ccl, v_igl, v_g, logged_total)
                if not np.isfinite([v_ccl, v_igl, v_g]).all():
                    raise TrainingDivergedError(step, breakdown)
                grads = ad.grads_for(total, params)
                if config.grad_clip is not None:
                    norm = global_grad_norm(grads)
                    if norm > config.grad_clip:
                        scale = config.grad_clip / norm
                        grads = {name: g * scale for name, g in grads.items()}
                adam_step(params, grads, adam, config.learning_rate)
                entry = StepLog(
                    step=step,
                    l_ccl=v_ccl,
                    l_igl=v_igl,
                    l_g=v_g,
                    l_total=logged_total,
                    grad_norm=global_grad_norm(grads),
                    wall_ms=(time.perf_counter() - started) * 1e3,
                    lambda_igl=effective.lambda_igl,
                    lambda_g=effective.lambda_g,
                )
                step_logs.append(entry)
                if log_fh:
                    log_fh.write(json.dumps(entry.to_dict()) + "\n")
                step += 1
    finally:
        if log_fh:
            log_fh.close()

    if checkpoint_path:
        save_checkpoint(checkpoint_path, model_config, params,
                        extra={"pooling_mode": config.pooling_mode})
    return TrainResult(params=params, model_config=model_config,
                       step_logs=step_logs, checkpoint_path=checkpoint_path)


# ---------------------------------------------------------------------------
# evaluation helpers and the ablation suite
# ---------------------------------------------------------------------------


def evaluate_model(
    passages: Sequence[Passage],
    conversations: Sequence[Conversation],
    vocab: Vocab,
    params: dict,
    model_config: ModelConfig,
    k: int = 100,
    pooling: str = "query_span",
    query_type: str = "full",
):
    """Embed, retrieve and score every turn; returns (run, EvalReport)."""
    store = build_store(passages, vocab, params, model_config)
    run = run_retrieval(conversations, store, vocab, params, model_config,
                        mode=query_type, k=k, pooling=pooling)
    qrels = qrels_from_conversations(conversations)
    return run, evaluate_run(run, qrels)


def response_perplexity(
    passages: Sequence[Passage],
    conversations: Sequence[Conversation],
    vocab: Vocab,
    params: dict,
    model_config: ModelConfig,
    batch_size: int = 16,
) -> float:
    """exp(mean NLL) of gold responses given full history plus gold passage."""
    passages_by_id = {p.id: p for p in passages}
    rng = np.random.default_rng(0)  # unused by full_history sampling
    instances = [
        sample_instance(c, n, vocab, passages_by_id, model_config.context_len,
                        rng, mode="full_history")
        for c in conversations
        for n in range(1, len(c.turns) + 1)
    ]
    if not instances:
        raise ValueError("no evaluation instances")
    nll_sum = 0.0
    token_count = 0
    with ad.no_grad():
        for lo in range(0, len(instances), batch_size):
            chunk = instances[lo:lo + batch_size]
            gen_ids = _pad_batch([inst.gen_ids for inst in chunk])
            time_len = gen_ids.shape[1]
            _, logits = forward_batch(gen_ids, params, model_config, want_logits=True)
            for b, inst in enumerate(chunk):
                row_logits = ad.reshape(ad.gather_rows(logits, np.array([b])),
                                        (time_len, model_config.vocab_size))
                mask = np.zeros(time_len, dtype=bool)
                mask[: len(inst.gen_mask)] = inst.gen_mask
                n_tokens = int(mask.sum())
                nll_sum += float(gen_loss(row_logits, gen_ids[b], mask).data) * n_tokens
                token_count += n_tokens
    return float(np.exp(nll_sum / token_count))


LOSS_VARIANTS = {
    "ccl": AblationFlags(ccl_on=True, igl_on=False, gen_on=False),
    "ccl_igl": AblationFlags(ccl_on=True, igl_on=True, gen_on=False),
    "full": AblationFlags(ccl_on=True, igl_on=True, gen_on=True),
}

LAMBDA_SWEEP = (
    (1.0, 0.05),
    (1.0, 0.10),
    (1.0, 0.30),
    (0.5, 0.10),
    (2.0, 0.10),
)


@dataclass
class AblationRow:
    axis: str
    label: str
    seed: int
    report: EvalReport

    def metric(self, name: str) -> float:
        data = self.report.to_dict()
        return float(data[name])


def run_ablation_suite(
    passages: Sequence[Passage],
    train_conversations: Sequence[Conversation],
    eval_conversations: Sequence[Conversation],
    vocab: Vocab,
    model_config: ModelConfig,
    base_config: TrainConfig,
    seeds: Sequence[int] = (1, 2, 3),
    axes: Sequence[str] = ("losses",),
    eval_k: int = 100,
) -> list:
    """Train and evaluate the requested ablation grid on a shared eval split.

    Axes: "losses" (contrastive-only, +rewrite alignment, +generation),
    "sampling" (dynamic vs full-history windows at the full objective),
    "pooling" (query-span vs whole-sequence embeddings), and "lambdas"
    (the weight sweep). Every variant of an axis sees identical eval queries.
    """
    n_eval_queries = sum(len(c.turns) for c in eval_conversations)
    if n_eval_queries < 100:
        raise ValueError(
            f"evaluation split has {n_eval_queries} queries; need >= 100 for stable ablations"
        )
    rows: list = []

    def run_one(axis: str, label: str, cfg: TrainConfig, seed: int) -> AblationRow:
        cfg = replace(cfg, seed=seed)
        result = train(passages, train_conversations, vocab, model_config, cfg)
        _, report = evaluate_model(
            passages, eval_conversations, vocab, result.params, model_config,
            k=eval_k, pooling=cfg.pooling_mode,
        )
        return AblationRow(axis=axis, label=label, seed=seed, report=report)

    for axis in axes:
        if axis == "losses":
            for label, flags in LOSS_VARIANTS.items():
                cfg = replace(base_config, ablation=flags)
                for seed in seeds:
                    rows.append(run_one(axis, label, cfg, seed))
        elif axis == "sampling":
            for mode in SAMPLING_MODES:
                cfg = replace(base_config, sampling_mode=mode)
                for seed in seeds:
                    rows.append(run_one(axis, mode, cfg, seed))
        elif axis == "pooling":
            for pooling in POOLING_MODES:
                cfg = replace(base_config, pooling_mode=pooling)
                for seed in seeds:
                    rows.append(run_one(axis, pooling, cfg, seed))
        elif axis == "lambdas":
            for lam_igl, lam_g in LAMBDA_SWEEP:
                weights = replace(base_config.weights, lambda_igl=lam_igl, lambda_g=lam_g)
                cfg = replace(base_config, weights=weights)
                label = f"igl={lam_igl:g},g={lam_g:g}"
                for seed in seeds:
                    rows.append(run_one(axis, label, cfg, seed))
        else:
            raise ValueError(f"unknown ablation axis {axis!r}")
    return rows


def render_ablation_table(rows: Sequence[AblationRow]) -> str:
    """Plain-text table of ablation results, one row per (variant, seed)."""
    header = f"{'axis':<10} {'variant':<18} {'seed':>4} {'mrr':>8} {'ndcg@3':>8} {'hit@5':>8} {'hit@20':>8} {'hir@20':>8}"
    lines = [header, "-" * len(header)]
    for row in rows:
        d = row.report.to_dict()
        lines.append(
            f"{row.axis:<10} {row.label:<18} {row.seed:>4}"
            f" {d['mrr']:>8.4f} {d['ndcg_at_3']:>8.4f} {d['hit_at_5']:>8.4f}"
            f" {d['hit_at_20']:>8.4f} {d['hir_at_20']:>8.4f}"
        )
    return "\n".join(lines)
