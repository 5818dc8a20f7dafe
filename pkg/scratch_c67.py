"""Scratch: criterion 6 (pooling) and 7 (sampling) twins at the chosen scale."""
from convsearch.corpus import GenConfig, corpus_text_lines, generate
from convsearch.losses import LossWeights
from convsearch.model import ModelConfig
from convsearch.tokenizer import build_vocab
from convsearch.trainer import TrainConfig, evaluate_model, train

BASE = dict(n_topics=10, passages_per_topic=200, n_conversations=280,
            turns_min=4, turns_max=6, p_shift=0.3, p_anaphora=0.6,
            p_ellipsis=0.5, seed=77)
passages, conversations = generate(GenConfig(**BASE))
train_convs, eval_convs = conversations[:200], conversations[200:]
vocab = build_vocab(corpus_text_lines(passages, conversations))
mcfg = ModelConfig(vocab_size=len(vocab), d_model=32, n_layers=2, n_heads=4,
                   context_len=256, ff_mult=4)

def cfg(seed, **kw):
    base = dict(epochs=8, batch_size=8, learning_rate=3e-3, seed=seed,
                weights=LossWeights(1.0, 0.2, 0.05), k_rand=4)
    base.update(kw)
    return TrainConfig(**base)

print("== criterion 6: pooling (full objective) ==")
for seed in (1, 2, 3):
    vals = {}
    for pooling in ("query_span", "whole_sequence"):
        res = train(passages, train_convs, vocab, mcfg, cfg(seed, pooling_mode=pooling))
        _, rep = evaluate_model(passages, eval_convs, vocab, res.params, mcfg,
                                pooling=pooling)
        vals[pooling] = rep.to_dict()
    q = vals["query_span"]["ndcg_at_3"]
    w = vals["whole_sequence"]["ndcg_at_3"]
    print(f"s{seed}: ndcg@3 span={q:.3f} whole={w:.3f} {'Y' if q > w else 'n'}"
          f" | hit@5 span={vals['query_span']['hit_at_5']:.3f}"
          f" whole={vals['whole_sequence']['hit_at_5']:.3f}")

print("== criterion 7: sampling (full objective) ==")
for seed in (1, 2, 3):
    vals = {}
    for mode in ("dynamic", "full_history"):
        res = train(passages, train_convs, vocab, mcfg, cfg(seed, sampling_mode=mode))
        _, rep = evaluate_model(passages, eval_convs, vocab, res.params, mcfg)
        vals[mode] = rep.to_dict()
        assert len([1]) == 1
    d = vals["dynamic"]["ndcg_at_3"]
    f = vals["full_history"]["ndcg_at_3"]
    print(f"s{seed}: ndcg@3 dynamic={d:.3f} full_history={f:.3f} {'Y' if d > f else 'n'}"
          f" | hit@5 dyn={vals['dynamic']['hit_at_5']:.3f}"
          f" fh={vals['full_history']['hit_at_5']:.3f}")
