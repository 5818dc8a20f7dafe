"""Scratch: acceptance-scale ablation dry run (not part of the package)."""
import sys
import time

import numpy as np

from convsearch.corpus import GenConfig, corpus_text_lines, generate
from convsearch.losses import LossWeights
from convsearch.model import ModelConfig
from convsearch.tokenizer import build_vocab
from convsearch.trainer import (
    AblationFlags, TrainConfig, evaluate_model, response_perplexity, train,
)

D_MODEL = int(sys.argv[1]) if len(sys.argv) > 1 else 32
N_LAYERS = int(sys.argv[2]) if len(sys.argv) > 2 else 1
EPOCHS = int(sys.argv[3]) if len(sys.argv) > 3 else 6
LR = float(sys.argv[4]) if len(sys.argv) > 4 else 3e-3
TURNS_MIN = int(sys.argv[5]) if len(sys.argv) > 5 else 3
TURNS_MAX = int(sys.argv[6]) if len(sys.argv) > 6 else 5
SEEDS = (1, 2, 3)

gen = GenConfig(n_topics=10, passages_per_topic=200, n_conversations=280,
                turns_min=TURNS_MIN, turns_max=TURNS_MAX,
                p_shift=0.3, p_anaphora=0.6, seed=77)
t0 = time.time()
passages, conversations = generate(gen)
train_convs, eval_convs = conversations[:200], conversations[200:]
vocab = build_vocab(corpus_text_lines(passages, conversations))
n_eval_q = sum(len(c.turns) for c in eval_convs)
print(f"corpus: {len(passages)} passages, {len(train_convs)}+{len(eval_convs)} convs, "
      f"{n_eval_q} eval queries, vocab {len(vocab)} ({time.time()-t0:.1f}s)")

mcfg = ModelConfig(vocab_size=len(vocab), d_model=D_MODEL, n_layers=N_LAYERS,
                   n_heads=4, context_len=192, ff_mult=4)

VARIANTS = {
    "ccl": AblationFlags(True, False, False),
    "ccl_igl": AblationFlags(True, True, False),
    "full": AblationFlags(True, True, True),
}

results = {}
models = {}
for label, flags in VARIANTS.items():
    for seed in SEEDS:
        tcfg = TrainConfig(epochs=EPOCHS, batch_size=8, learning_rate=LR, seed=seed,
                           weights=LossWeights(lambda_igl=1.0, lambda_g=0.2, tau=0.05),
                           ablation=flags, k_rand=4)
        t0 = time.time()
        res = train(passages, train_convs, vocab, mcfg, tcfg)
        t_train = time.time() - t0
        t0 = time.time()
        run, report = evaluate_model(passages, eval_convs, vocab, res.params, mcfg)
        t_eval = time.time() - t0
        d = report.to_dict()
        results[(label, seed)] = d
        models[(label, seed)] = res.params
        first = np.mean([e.l_ccl for e in res.step_logs[:10]])
        last = np.mean([e.l_ccl for e in res.step_logs[-10:]])
        print(f"{label:8s} seed {seed}: hit@5={d['hit_at_5']:.3f} ndcg@3={d['ndcg_at_3']:.3f} "
              f"mrr={d['mrr']:.3f} hir@20={d['hir_at_20']:.3f} "
              f"ccl {first:.2f}->{last:.2f} [{t_train:.0f}s train, {t_eval:.0f}s eval]")

print("\ncriterion 5 check (hit@5): full >= ccl_igl >= ccl per seed")
chain_ok = 0
strict_ok = 0
for seed in SEEDS:
    h = {label: results[(label, seed)]["hit_at_5"] for label in VARIANTS}
    chain = h["full"] >= h["ccl_igl"] >= h["ccl"]
    strict = h["full"] > h["ccl"]
    chain_ok += chain
    strict_ok += strict
    print(f"  seed {seed}: ccl={h['ccl']:.3f} ccl_igl={h['ccl_igl']:.3f} full={h['full']:.3f} "
          f"chain={'Y' if chain else 'n'} strict={'Y' if strict else 'n'}")
print(f"chain {chain_ok}/3 (need >=2), strict {strict_ok}/3 (need 3)")

print("\ncriterion 8 check (mean hir@20): full < ccl per seed")
ok = 0
for seed in SEEDS:
    hir_full = results[("full", seed)]["hir_at_20"]
    hir_ccl = results[("ccl", seed)]["hir_at_20"]
    ok += hir_full < hir_ccl
    print(f"  seed {seed}: full={hir_full:.3f} ccl={hir_ccl:.3f} {'Y' if hir_full < hir_ccl else 'n'}")
print(f"hir {ok}/3 (need >=2)")

print("\ncriterion 9 check (held-out response ppl): full < ccl_igl per seed")
for seed in SEEDS:
    ppl_full = response_perplexity(passages, eval_convs, vocab, models[("full", seed)], mcfg)
    ppl_igl = response_perplexity(passages, eval_convs, vocab, models[("ccl_igl", seed)], mcfg)
    print(f"  seed {seed}: full={ppl_full:.2f} ccl_igl={ppl_igl:.2f} "
          f"{'Y' if ppl_full < ppl_igl else 'n'}")
