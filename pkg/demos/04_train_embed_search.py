"""Train a small retriever, embed the collection, and search conversationally.

The query embedding pools only the current-query tokens at the end of the
encoded dialogue, so context rides along through attention without drowning
the current information need.

Run: python demos/04_train_embed_search.py   (about a minute on CPU)
"""

import numpy as np

from convsearch.corpus import GenConfig, corpus_text_lines, generate
from convsearch.index import build_store, search
from convsearch.losses import LossWeights
from convsearch.model import ModelConfig
from convsearch.querytypes import embed_queries, encode_query_input
from convsearch.tokenizer import build_vocab
from convsearch.trainer import TrainConfig, train

gen = GenConfig(n_topics=5, passages_per_topic=40, n_conversations=60,
                turns_min=3, turns_max=5, p_shift=0.3, p_anaphora=0.7, seed=8)
passages, conversations = generate(gen)
train_convs, eval_convs = conversations[:50], conversations[50:]
vocab = build_vocab(corpus_text_lines(passages, conversations))
print(f"{len(passages)} passages, vocab {len(vocab)}")

model_config = ModelConfig(vocab_size=len(vocab), d_model=32, n_layers=1,
                           n_heads=4, context_len=192)
config = TrainConfig(epochs=6, batch_size=8, learning_rate=3e-3, seed=1,
                     weights=LossWeights(lambda_igl=1.0, lambda_g=0.2, tau=0.05))
result = train(passages, train_convs, vocab, model_config, config)
print(f"trained {len(result.step_logs)} steps; "
      f"contrastive loss {result.step_logs[0].l_ccl:.2f} -> {result.step_logs[-1].l_ccl:.2f}")

store = build_store(passages, vocab, result.params, model_config)
by_id = {p.id: p for p in passages}

conversation = next(c for c in eval_convs
                    if any("its" in t.query.split() for t in c.turns))
print(f"\nconversation {conversation.id}; retrieval with full history:")
for n, turn in enumerate(conversation.turns, start=1):
    encoded = encode_query_input(conversation, n, "full", vocab,
                                 model_config.context_len)
    embedding = embed_queries([encoded], result.params, model_config)[0]
    top = search(store, embedding, k=3)
    gold = turn.gold_passage_ids[0]
    print(f"\n  turn {n}: {turn.query}")
    for rank, (pid, score) in enumerate(top.entries, start=1):
        tag = "<- gold" if pid == gold else ""
        print(f"    {rank}. {score:+.3f} {by_id[pid].text[:60]} {tag}")
