"""Scratch: validate criterion-8 setup — mixed-trained pair, shift evals, 6 seeds."""
from convsearch.corpus import GenConfig, corpus_text_lines, generate
from convsearch.losses import LossWeights
from convsearch.model import ModelConfig
from convsearch.tokenizer import build_vocab
from convsearch.trainer import AblationFlags, TrainConfig, evaluate_model, train

BASE = dict(n_topics=10, passages_per_topic=200, n_conversations=280,
            turns_min=4, turns_max=6, p_shift=0.3, p_anaphora=0.6,
            p_ellipsis=0.5, seed=77)
passages, conversations = generate(GenConfig(**BASE))
train_convs = conversations[:200]
vocab = build_vocab(corpus_text_lines(passages, conversations))
mcfg = ModelConfig(vocab_size=len(vocab), d_model=32, n_layers=2, n_heads=4,
                   context_len=256, ff_mult=4)


def eval_variant(n, **kw):
    cfg = dict(BASE)
    cfg.update(n_conversations=BASE["n_conversations"] + n, **kw)
    ps, convs = generate(GenConfig(**cfg))
    assert ps == passages
    return convs[BASE["n_conversations"]:]


EVALS = {
    "x7 t6-8 n160": eval_variant(160, p_shift=0.7, p_anaphora=0.0,
                                 p_ellipsis=0.0, turns_min=6, turns_max=8),
    "x7 t10-12 n120": eval_variant(120, p_shift=0.7, p_anaphora=0.0,
                                   p_ellipsis=0.0, turns_min=10, turns_max=12),
}
for name, convs in EVALS.items():
    print(name, sum(len(c.turns) for c in convs), "queries", flush=True)

for seed in (1, 2, 3, 4, 5, 6):
    models = {}
    for label, flags in (("ccl", AblationFlags(True, False, False)),
                         ("full", AblationFlags(True, True, True))):
        tcfg = TrainConfig(epochs=8, batch_size=8, learning_rate=3e-3, seed=seed,
                           weights=LossWeights(1.0, 0.2, 0.05), ablation=flags,
                           k_rand=4)
        models[label] = train(passages, train_convs, vocab, mcfg, tcfg).params
    out = [f"s{seed}"]
    for name, convs in EVALS.items():
        vals = {}
        for label, params in models.items():
            _, rep = evaluate_model(passages, convs, vocab, params, mcfg, k=100)
            vals[label] = rep.to_dict()["hir_at_20"]
        out.append(f"{name}: ccl={vals['ccl']:.4f} full={vals['full']:.4f} "
                   f"{'Y' if vals['full'] < vals['ccl'] else 'n'}")
    print(" | ".join(out), flush=True)
