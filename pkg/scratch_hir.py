"""Scratch: which eval geometry produces the HIR direction (full < ccl)."""
import time

import numpy as np

from convsearch.corpus import GenConfig, corpus_text_lines, generate
from convsearch.losses import LossWeights
from convsearch.model import ModelConfig
from convsearch.tokenizer import build_vocab
from convsearch.trainer import AblationFlags, TrainConfig, evaluate_model, train

BASE = dict(n_topics=10, passages_per_topic=200, n_conversations=280,
            turns_min=4, turns_max=6, p_shift=0.3, p_anaphora=0.6, seed=77)
passages, conversations = generate(GenConfig(**BASE))
train_convs = conversations[:200]
vocab = build_vocab(corpus_text_lines(passages, conversations))
mcfg = ModelConfig(vocab_size=len(vocab), d_model=32, n_layers=1, n_heads=4,
                   context_len=256, ff_mult=4)

# eval variants share the collection: same (n_topics, passages_per_topic, seed)
def eval_convs_for(p_shift, p_anaphora, turns_min, turns_max, n=360):
    cfg = dict(BASE)
    cfg.update(p_shift=p_shift, p_anaphora=p_anaphora,
               turns_min=turns_min, turns_max=turns_max, n_conversations=n)
    ps, convs = generate(GenConfig(**cfg))
    assert ps == passages
    return convs[280:]  # unseen tail, disjoint from training indices

EVALS = {
    "inherit(0.3)": conversations[200:280],
    "shift0.8": eval_convs_for(0.8, 0.6, 4, 6),
    "shift0.8 longer": eval_convs_for(0.8, 0.6, 6, 8),
    "shift0.5": eval_convs_for(0.5, 0.6, 4, 6),
}
for name, convs in EVALS.items():
    print(name, sum(len(c.turns) for c in convs), "queries")

VARIANTS = {"ccl": AblationFlags(True, False, False),
            "full": AblationFlags(True, True, True)}
for seed in (1, 2, 3):
    models = {}
    for label, flags in VARIANTS.items():
        tcfg = TrainConfig(epochs=4, batch_size=8, learning_rate=3e-3, seed=seed,
                           weights=LossWeights(lambda_igl=1.0, lambda_g=0.2, tau=0.05),
                           ablation=flags, k_rand=4)
        models[label] = train(passages, train_convs, vocab, mcfg, tcfg).params
    for name, convs in EVALS.items():
        vals = {}
        hits = {}
        for label, params in models.items():
            _, report = evaluate_model(passages, convs, vocab, params, mcfg, k=100)
            d = report.to_dict()
            vals[label] = d["hir_at_20"]
            hits[label] = d["hit_at_5"]
        better = "Y" if vals["full"] < vals["ccl"] else "n"
        print(f"seed {seed} {name:16s}: hir full={vals['full']:.3f} ccl={vals['ccl']:.3f} [{better}]"
              f"  hit@5 full={hits['full']:.3f} ccl={hits['ccl']:.3f}")
