"""Scratch: model-scale grid for ablation ordering robustness."""
import sys
import time

from convsearch.corpus import GenConfig, corpus_text_lines, generate
from convsearch.losses import LossWeights
from convsearch.model import ModelConfig
from convsearch.tokenizer import build_vocab
from convsearch.trainer import AblationFlags, TrainConfig, evaluate_model, train

D, L, E = int(sys.argv[1]), int(sys.argv[2]), int(sys.argv[3])
LR = float(sys.argv[4]) if len(sys.argv) > 4 else 3e-3
P_ELL = float(sys.argv[5]) if len(sys.argv) > 5 else 0.5

BASE = dict(n_topics=10, passages_per_topic=200, n_conversations=280,
            turns_min=4, turns_max=6, p_shift=0.3, p_anaphora=0.6,
            p_ellipsis=P_ELL, seed=77)
passages, conversations = generate(GenConfig(**BASE))
train_convs, eval_convs = conversations[:200], conversations[200:]
vocab = build_vocab(corpus_text_lines(passages, conversations))

shift_cfg = dict(BASE)
shift_cfg.update(p_shift=0.7, n_conversations=360)
shift_passages, shift_all = generate(GenConfig(**shift_cfg))
assert shift_passages == passages
shift_eval = shift_all[280:]

mcfg = ModelConfig(vocab_size=len(vocab), d_model=D, n_layers=L, n_heads=4,
                   context_len=256, ff_mult=4)
print(f"d={D} L={L} epochs={E} lr={LR} p_ell={P_ELL}; "
      f"eval {sum(len(c.turns) for c in eval_convs)} q, "
      f"shift-eval {sum(len(c.turns) for c in shift_eval)} q")

VARIANTS = {"ccl": AblationFlags(True, False, False),
            "ccl_igl": AblationFlags(True, True, False),
            "full": AblationFlags(True, True, True)}
R = {}
for label, flags in VARIANTS.items():
    for seed in (1, 2, 3):
        tcfg = TrainConfig(epochs=E, batch_size=8, learning_rate=LR, seed=seed,
                           weights=LossWeights(1.0, 0.2, 0.05), ablation=flags,
                           k_rand=4)
        t0 = time.time()
        res = train(passages, train_convs, vocab, mcfg, tcfg)
        t_train = time.time() - t0
        _, rep = evaluate_model(passages, eval_convs, vocab, res.params, mcfg)
        _, rep_s = evaluate_model(passages, shift_eval, vocab, res.params, mcfg)
        d, ds = rep.to_dict(), rep_s.to_dict()
        R[(label, seed)] = (d, ds)
        print(f"{label:8s} s{seed}: hit@5={d['hit_at_5']:.3f} ndcg@3={d['ndcg_at_3']:.3f} "
              f"hir20={d['hir_at_20']:.3f} | shift hit@5={ds['hit_at_5']:.3f} "
              f"hir20={ds['hir_at_20']:.3f} [{t_train:.0f}s]")

print("\nsummary:")
for seed in (1, 2, 3):
    h = {l: R[(l, seed)][0]["hit_at_5"] for l in VARIANTS}
    n = {l: R[(l, seed)][0]["ndcg_at_3"] for l in VARIANTS}
    i0 = {l: R[(l, seed)][0]["hir_at_20"] for l in VARIANTS}
    i1 = {l: R[(l, seed)][1]["hir_at_20"] for l in VARIANTS}
    print(f"  s{seed}: chain={'Y' if h['full']>=h['ccl_igl']>=h['ccl'] else 'n'}"
          f" strict={'Y' if h['full']>h['ccl'] else 'n'}"
          f" | ndcg chain={'Y' if n['full']>=n['ccl_igl']>=n['ccl'] else 'n'}"
          f" | hir(0.3) {'Y' if i0['full']<i0['ccl'] else 'n'}"
          f" ({i0['full']:.3f} vs {i0['ccl']:.3f})"
          f" | hir(0.7) {'Y' if i1['full']<i1['ccl'] else 'n'}"
          f" ({i1['full']:.3f} vs {i1['ccl']:.3f})")
