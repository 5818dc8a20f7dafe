"""Scratch: criterion-8 pair trained on a shift-heavy corpus, 6 seeds."""
import sys

from convsearch.corpus import GenConfig, corpus_text_lines, generate
from convsearch.losses import LossWeights
from convsearch.model import ModelConfig
from convsearch.tokenizer import build_vocab
from convsearch.trainer import AblationFlags, TrainConfig, evaluate_model, train

P_SHIFT = float(sys.argv[1]) if len(sys.argv) > 1 else 0.7
TURNS = (int(sys.argv[2]), int(sys.argv[3])) if len(sys.argv) > 3 else (5, 7)

BASE = dict(n_topics=10, passages_per_topic=200, n_conversations=360,
            turns_min=TURNS[0], turns_max=TURNS[1], p_shift=P_SHIFT,
            p_anaphora=0.6, p_ellipsis=0.5, seed=177)
passages, conversations = generate(GenConfig(**BASE))
train_convs, eval_convs = conversations[:200], conversations[200:]
vocab = build_vocab(corpus_text_lines(passages, conversations))
mcfg = ModelConfig(vocab_size=len(vocab), d_model=32, n_layers=2, n_heads=4,
                   context_len=320, ff_mult=4)
print(f"p_shift={P_SHIFT} turns={TURNS}; eval queries "
      f"{sum(len(c.turns) for c in eval_convs)}")

explicit_cfg = dict(BASE)
explicit_cfg.update(n_conversations=520, p_anaphora=0.0, p_ellipsis=0.0)
ep, e_all = generate(GenConfig(**explicit_cfg))
assert ep == passages
explicit_eval = e_all[360:]
print(f"explicit eval queries {sum(len(c.turns) for c in explicit_eval)}")

for seed in (1, 2, 3, 4, 5, 6):
    models = {}
    for label, flags in (("ccl", AblationFlags(True, False, False)),
                         ("full", AblationFlags(True, True, True))):
        tcfg = TrainConfig(epochs=8, batch_size=8, learning_rate=3e-3, seed=seed,
                           weights=LossWeights(1.0, 0.2, 0.05), ablation=flags,
                           k_rand=4)
        models[label] = train(passages, train_convs, vocab, mcfg, tcfg).params
    out = [f"s{seed}:"]
    for name, convs in (("own", eval_convs), ("explicit", explicit_eval)):
        vals, hits = {}, {}
        for label, params in models.items():
            _, rep = evaluate_model(passages, convs, vocab, params, mcfg, k=100)
            d = rep.to_dict()
            vals[label] = d["hir_at_20"]
            hits[label] = d["hit_at_5"]
        out.append(f"{name}: ccl={vals['ccl']:.3f} full={vals['full']:.3f} "
                   f"{'Y' if vals['full'] < vals['ccl'] else 'n'} "
                   f"(hit {hits['ccl']:.2f}/{hits['full']:.2f})")
    print(" | ".join(out), flush=True)
