"""Scratch: rank distribution of prior-turn golds, ccl vs full, many seeds."""
import sys

import numpy as np

from convsearch.corpus import GenConfig, corpus_text_lines, generate
from convsearch.index import build_store
from convsearch.losses import LossWeights
from convsearch.model import ModelConfig
from convsearch.evaluator import qrels_from_conversations
from convsearch.querytypes import run_retrieval
from convsearch.tokenizer import build_vocab
from convsearch.trainer import AblationFlags, TrainConfig, train

EPOCHS = int(sys.argv[1]) if len(sys.argv) > 1 else 4
SEEDS = (1, 2, 3, 4, 5, 6)

BASE = dict(n_topics=10, passages_per_topic=200, n_conversations=280,
            turns_min=4, turns_max=6, p_shift=0.3, p_anaphora=0.6,
            p_ellipsis=0.5, seed=77)
passages, conversations = generate(GenConfig(**BASE))
train_convs, eval_convs = conversations[:200], conversations[200:]
vocab = build_vocab(corpus_text_lines(passages, conversations))
mcfg = ModelConfig(vocab_size=len(vocab), d_model=32, n_layers=1, n_heads=4,
                   context_len=256, ff_mult=4)
qrels = qrels_from_conversations(eval_convs)


def prior_gold_ranks(run, qrels):
    """For every query with a nonempty interference set, the best rank of any
    interfering passage (None if outside the run depth)."""
    best = []
    for key, ranking in run.items():
        cid, turn = key
        prior = set()
        for t in range(1, turn):
            prior |= set(qrels.get((cid, t), ()))
        prior -= qrels[key]
        if not prior:
            continue
        rank = None
        for r, (pid, _s) in enumerate(ranking, 1):
            if pid in prior:
                rank = r
                break
        best.append(rank)
    return best


for seed in SEEDS:
    row = {}
    for label, flags in (("ccl", AblationFlags(True, False, False)),
                         ("full", AblationFlags(True, True, True))):
        tcfg = TrainConfig(epochs=EPOCHS, batch_size=8, learning_rate=3e-3,
                           seed=seed, weights=LossWeights(1.0, 0.2, 0.05),
                           ablation=flags, k_rand=4)
        res = train(passages, train_convs, vocab, mcfg, tcfg)
        store = build_store(passages, vocab, res.params, mcfg)
        run = run_retrieval(eval_convs, store, vocab, res.params, mcfg,
                            mode="full", k=200)
        ranks = prior_gold_ranks(run, qrels)
        hits = sum(1 for c in ranks if c is not None and c <= 20)
        in50 = sum(1 for c in ranks if c is not None and c <= 50)
        in100 = sum(1 for c in ranks if c is not None and c <= 100)
        row[label] = (hits, in50, in100, len(ranks))
    c20, c50, c100, n = row["ccl"]
    f20, f50, f100, _ = row["full"]
    print(f"seed {seed}: n={n} | hir-count@20 ccl={c20} full={f20} {'Y' if f20<c20 else 'n'}"
          f" | @50 ccl={c50} full={f50} {'Y' if f50<c50 else 'n'}"
          f" | @100 ccl={c100} full={f100} {'Y' if f100<c100 else 'n'}")
