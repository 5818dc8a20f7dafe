"""Scratch: criterion-8 on a 10k-passage topic-shift corpus (higher selectivity)."""
import sys

from convsearch.corpus import GenConfig, corpus_text_lines, generate
from convsearch.losses import LossWeights
from convsearch.model import ModelConfig
from convsearch.tokenizer import build_vocab
from convsearch.trainer import AblationFlags, TrainConfig, evaluate_model, train

EPOCHS = int(sys.argv[1]) if len(sys.argv) > 1 else 4
LAYERS = int(sys.argv[2]) if len(sys.argv) > 2 else 1

BASE = dict(n_topics=20, passages_per_topic=500, n_conversations=280,
            turns_min=4, turns_max=6, p_shift=0.3, p_anaphora=0.6,
            p_ellipsis=0.5, seed=177)
passages, conversations = generate(GenConfig(**BASE))
train_convs = conversations[:200]
vocab = build_vocab(corpus_text_lines(passages, conversations))
mcfg = ModelConfig(vocab_size=len(vocab), d_model=32, n_layers=LAYERS, n_heads=4,
                   context_len=256, ff_mult=4)
print(f"{len(passages)} passages, vocab {len(vocab)}, epochs={EPOCHS} layers={LAYERS}",
      flush=True)


def eval_variant(n, **kw):
    cfg = dict(BASE)
    cfg.update(n_conversations=280 + n, **kw)
    ps, convs = generate(GenConfig(**cfg))
    assert ps == passages
    return convs[280:]


EVALS = {
    "own 0.3": conversations[200:],
    "x0.7 t6-8": eval_variant(160, p_shift=0.7, p_anaphora=0.0,
                              p_ellipsis=0.0, turns_min=6, turns_max=8),
    "mix0.7 t6-8": eval_variant(160, p_shift=0.7, turns_min=6, turns_max=8),
}
for name, convs in EVALS.items():
    print(name, sum(len(c.turns) for c in convs), "q", flush=True)

for seed in (1, 2, 3, 4, 5, 6):
    models = {}
    for label, flags in (("ccl", AblationFlags(True, False, False)),
                         ("full", AblationFlags(True, True, True))):
        tcfg = TrainConfig(epochs=EPOCHS, batch_size=8, learning_rate=3e-3,
                           seed=seed, weights=LossWeights(1.0, 0.2, 0.05),
                           ablation=flags, k_rand=4)
        models[label] = train(passages, train_convs, vocab, mcfg, tcfg).params
    out = [f"s{seed}"]
    for name, convs in EVALS.items():
        vals, hits = {}, {}
        for label, params in models.items():
            _, rep = evaluate_model(passages, convs, vocab, params, mcfg, k=100)
            d = rep.to_dict()
            vals[label] = d["hir_at_20"]
            hits[label] = d["hit_at_5"]
        out.append(f"{name}: c={vals['ccl']:.4f} f={vals['full']:.4f} "
                   f"{'Y' if vals['full'] < vals['ccl'] else 'n'} "
                   f"(h {hits['ccl']:.2f}/{hits['full']:.2f})")
    print(" | ".join(out), flush=True)
