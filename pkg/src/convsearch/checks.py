"""End-to-end gradient checks for the training objectives.

Builds a micro corpus and a float64 toy model, then runs central finite
differences through each loss and through the full combined training step.
These are slow by design and sized to stay under a couple of minutes on CPU.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import autodiff as ad
from .autodiff import GradCheckReport, Tensor, finite_difference_check
from .corpus import GenConfig, corpus_text_lines, generate
from .losses import LossWeights, ccl_loss, gen_loss, igl_loss
from .model import (
    ModelConfig,
    embed_passages_batch,
    extract_query_embedding,
    forward,
    init_params,
)
from .sampler import Batch, sample_instance
from .tokenizer import build_vocab, encode_passage
from .trainer import TrainConfig, _rewrite_embeddings, train_step

# two central-difference steps: the large one rides over rounding noise on
# near-zero gradients, the small one keeps truncation down on the sharp
# temperature-scaled terms
LOSS_CHECK_EPSILONS = (1e-4, 2e-5, 1e-5)


def toy_fixture(seed: int = 0):
    """Micro corpus, vocab, float64 model (well under 5k parameters), and a
    2-instance batch built from non-first turns.

    Turn-1 instances are useless here: their rewrite equals the query, the
    alignment loss sits exactly at its minimum, and central differences see
    only curvature noise there. Later turns carry history, so the dialogue
    and rewrite embeddings genuinely differ.
    """
    gen = GenConfig(
        n_topics=2, passages_per_topic=2, n_conversations=3,
        turns_min=2, turns_max=3, p_shift=0.5, p_anaphora=0.9, seed=seed,
    )
    passages, conversations = generate(gen)
    vocab = build_vocab(corpus_text_lines(passages, conversations))
    model_config = ModelConfig(
        vocab_size=len(vocab), d_model=8, n_layers=1, n_heads=2,
        context_len=64, ff_mult=2, dropout=0.0,
    )
    params = init_params(model_config, seed=seed, dtype=np.float64)
    passages_by_id = {p.id: p for p in passages}
    rng = np.random.default_rng(seed)

    candidates = []
    for c in conversations:
        for n in range(2, len(c.turns) + 1):
            anaphoric = c.turns[n - 1].rewrite != c.turns[n - 1].query
            candidates.append((not anaphoric, c.id, n, c))
    candidates.sort(key=lambda t: t[:3])
    chosen = candidates[:2]

    instances = [
        sample_instance(c, n, vocab, passages_by_id, model_config.context_len,
                        rng, mode="full_history")
        for _, _, n, c in chosen
    ]
    all_ids = [p.id for p in passages]
    finished = []
    for i, inst in enumerate(instances):
        negatives = []
        other = instances[1 - i].positive_id
        if other not in inst.gold_ids:
            negatives.append(other)
        for pid in all_ids:
            if len(negatives) >= 3:
                break
            if pid not in inst.gold_ids and pid not in negatives:
                negatives.append(pid)
        finished.append(replace(inst, negative_ids=tuple(negatives)))
    batch = Batch(instances=tuple(finished))
    return passages, conversations, vocab, model_config, params, batch


def _loss_inputs(fixture):
    passages, _conversations, vocab, model_config, _params, batch = fixture
    passages_by_id = {p.id: p for p in passages}
    inst = batch.instances[0]
    encoded_pos = encode_passage(passages_by_id[inst.positive_id].text, vocab)
    encoded_negs = [
        encode_passage(passages_by_id[pid].text, vocab) for pid in inst.negative_ids[:2]
    ]
    return inst, encoded_pos, encoded_negs, model_config


def check_ccl(fixture, epsilon=LOSS_CHECK_EPSILONS, tolerance: float = 1e-4) -> GradCheckReport:
    """Contrastive loss through the model: dialogue, gold and negatives."""
    inst, encoded_pos, encoded_negs, model_config = _loss_inputs(fixture)

    def f(params):
        hidden, _ = forward(inst.dialogue.ids, params, model_config)
        e_q = extract_query_embedding(hidden, inst.dialogue.query_length)
        pooled = embed_passages_batch([encoded_pos] + encoded_negs, params, model_config)
        e_pos = ad.reshape(ad.gather_rows(pooled, np.array([0])), (model_config.d_model,))
        e_negs = [
            ad.reshape(ad.gather_rows(pooled, np.array([i + 1])), (model_config.d_model,))
            for i in range(len(encoded_negs))
        ]
        return ccl_loss(e_q, e_pos, e_negs, tau=0.05)

    params = fixture[4]
    return finite_difference_check(f, params, epsilon, tolerance, op_name="ccl_loss")


def check_igl(fixture, epsilon=LOSS_CHECK_EPSILONS, tolerance: float = 1e-4) -> GradCheckReport:
    """Rewrite-alignment loss with a frozen target embedding."""
    inst, _pos, _negs, model_config = _loss_inputs(fixture)
    params = fixture[4]
    with ad.no_grad():
        hidden, _ = forward(inst.rewrite.ids, params, model_config)
        target = extract_query_embedding(hidden, inst.rewrite.query_length).detach()

    def f(p):
        hidden_q, _ = forward(inst.dialogue.ids, p, model_config)
        e_q = extract_query_embedding(hidden_q, inst.dialogue.query_length)
        return igl_loss(e_q, target)

    return finite_difference_check(f, params, epsilon, tolerance, op_name="igl_loss")


def check_gen(fixture, epsilon=LOSS_CHECK_EPSILONS, tolerance: float = 1e-4) -> GradCheckReport:
    """Next-token loss over the response span of the generation sequence."""
    inst, _pos, _negs, model_config = _loss_inputs(fixture)
    params = fixture[4]
    mask = np.asarray(inst.gen_mask, dtype=bool)
    targets = np.asarray(inst.gen_ids)

    def f(p):
        _, logits = forward(inst.gen_ids, p, model_config)
        return gen_loss(logits, targets, mask)

    return finite_difference_check(f, params, epsilon, tolerance, op_name="gen_loss")


def check_combined(fixture, epsilon=LOSS_CHECK_EPSILONS, tolerance: float = 1e-4,
                   lambda_igl: float = 1.0, lambda_g: float = 0.2) -> GradCheckReport:
    """The full training-step objective, exactly as the trainer assembles it.

    The rewrite targets are frozen at the unperturbed parameters: the trainer
    blocks gradients into that branch, so the function whose gradient is
    being checked must hold the branch constant too.
    """
    passages, _conversations, vocab, model_config, params, batch = fixture
    passages_by_id = {p.id: p for p in passages}
    config = TrainConfig(
        batch_size=2,
        weights=LossWeights(lambda_igl=lambda_igl, lambda_g=lambda_g),
    )
    frozen_targets = _rewrite_embeddings(batch, params, model_config,
                                         config.pooling_mode, two_sided=False,
                                         dropout_rng=None)

    def f(p):
        total, _, _ = train_step(batch, passages_by_id, vocab, p, model_config,
                                 config, igl_targets=frozen_targets)
        return total

    return finite_difference_check(f, params, epsilon, tolerance, op_name="combined_loss")


def check_losses(seed: int = 0, epsilon=LOSS_CHECK_EPSILONS,
                 tolerance: float = 1e-4) -> list:
    """All four loss checks on a fresh toy fixture."""
    fixture = toy_fixture(seed)
    return [
        check_ccl(fixture, epsilon, tolerance),
        check_igl(fixture, epsilon, tolerance),
        check_gen(fixture, epsilon, tolerance),
        check_combined(fixture, epsilon, tolerance),
    ]


_OP_CASES = {
    "add": ((2, 3), (2, 3)),
    "sub": ((2, 3), (2, 3)),
    "mul": ((2, 3), (2, 3)),
    "div": ((2, 3), (2, 3)),
    "log": ((2, 3),),
    "exp": ((2, 3),),
    "sqrt": ((2, 3),),
    "tanh": ((2, 3),),
    "relu": ((2, 3),),
    "gelu": ((2, 3),),
    "matmul": ((2, 3), (3, 4)),
    "softmax": ((2, 4),),
    "log_softmax": ((2, 4),),
    "layer_norm": ((2, 4),),
}


def check_core_ops(seed: int = 0, points: int = 10, epsilon: float = 1e-5,
                   tolerance: float = 1e-4) -> list:
    """Finite-difference sweep over every registered op at random points."""
    rng = np.random.default_rng(seed)
    reports = []
    for name, shapes in _OP_CASES.items():
        worst = 0.0
        for _ in range(points):
            arrays = [rng.normal(0.0, 1.0, size=shape) for shape in shapes]
            if name in ("log", "sqrt", "div"):
                arrays = [np.abs(a) + 0.5 for a in arrays]
            if name == "relu":
                # keep points away from the kink, where the derivative jumps
                arrays = [np.where(np.abs(a) < 0.1, a + 0.5, a) for a in arrays]
            params = {
                f"x{i}": Tensor(a, requires_grad=True, dtype=np.float64)
                for i, a in enumerate(arrays)
            }

            def f(p):
                out = ad.forward_op(name, *(p[f"x{i}"] for i in range(len(shapes))))
                weights = Tensor(np.linspace(0.5, 1.5, out.data.size).reshape(out.shape))
                return ad.tsum(out * weights)

            report = finite_difference_check(f, params, epsilon, tolerance, op_name=name)
            worst = max(worst, report.max_rel_error)
        reports.append(GradCheckReport(
            op_name=name, max_rel_error=worst, tolerance=tolerance,
            passed=worst <= tolerance,
        ))
    return reports
