import numpy as np
import pytest

from convsearch.corpus import GenConfig, corpus_text_lines, generate
from convsearch.index import build_store
from convsearch.model import ModelConfig, init_params
from convsearch.querytypes import (
    QueryTypeConfig,
    build_query_input,
    compare_query_types,
    encode_query_input,
    run_retrieval,
)
from convsearch.tokenizer import ASSISTANT, build_vocab


@pytest.fixture(scope="module")
def qt_setup():
    config = GenConfig(n_topics=3, passages_per_topic=10, n_conversations=8,
                       turns_min=5, turns_max=6, p_shift=0.3, p_anaphora=0.5,
                       seed=17)
    passages, conversations = generate(config)
    vocab = build_vocab(corpus_text_lines(passages, conversations))
    model_config = ModelConfig(vocab_size=len(vocab), d_model=16, n_layers=1,
                               n_heads=2, context_len=160, ff_mult=2)
    params = init_params(model_config, seed=1)
    return passages, conversations, vocab, model_config, params


def test_first_turn_identical_across_modes(qt_setup):
    _, conversations, *_ = qt_setup
    c = conversations[0]
    for mode in ("current", "window", "full"):
        assert build_query_input(c, 1, mode) == [(c.turns[0].query, None)]


def test_window_takes_last_three_turns(qt_setup):
    _, conversations, *_ = qt_setup
    c = conversations[0]
    window = build_query_input(c, 5, "window")
    expected = [(t.query, t.response) for t in c.turns[1:4]]
    expected.append((c.turns[4].query, None))
    assert window == expected


def test_full_equals_window_at_turn_two(qt_setup):
    _, conversations, *_ = qt_setup
    c = conversations[0]
    assert build_query_input(c, 2, "full") == build_query_input(c, 2, "window")


def test_current_mode_has_no_response_tokens(qt_setup):
    _, conversations, vocab, model_config, _ = qt_setup
    c = conversations[0]
    encoded = encode_query_input(c, 4, "current", vocab, model_config.context_len)
    assert ASSISTANT not in encoded.ids


def test_full_mode_covers_every_prefix_turn_once(qt_setup):
    _, conversations, *_ = qt_setup
    c = conversations[0]
    window = build_query_input(c, len(c.turns), "full")
    assert len(window) == len(c.turns)
    queries = [q for q, _ in window]
    assert queries == [t.query for t in c.turns]


def test_unknown_mode_rejected(qt_setup):
    _, conversations, *_ = qt_setup
    with pytest.raises(ValueError):
        build_query_input(conversations[0], 1, "psychic")
    with pytest.raises(ValueError):
        QueryTypeConfig(mode="psychic").validate()


def test_encode_drops_oldest_turns_on_overflow(qt_setup):
    _, conversations, vocab, _, _ = qt_setup
    c = conversations[0]
    full = encode_query_input(c, 5, "full", vocab, context_len=10_000)
    tight = encode_query_input(c, 5, "full", vocab, context_len=full.length - 1)
    assert tight.length < full.length
    start, end = tight.current_query_span
    assert tight.ids[start:end] == full.ids[full.current_query_span[0]:]


def test_run_retrieval_covers_every_turn(qt_setup):
    passages, conversations, vocab, model_config, params = qt_setup
    store = build_store(passages, vocab, params, model_config)
    run = run_retrieval(conversations[:3], store, vocab, params, model_config,
                        mode="full", k=7)
    expected_keys = {
        (c.id, n) for c in conversations[:3] for n in range(1, len(c.turns) + 1)
    }
    assert set(run) == expected_keys
    assert all(len(ranking) == 7 for ranking in run.values())


def test_compare_query_types_shares_eval(qt_setup):
    passages, conversations, vocab, model_config, params = qt_setup
    reports = compare_query_types(passages, conversations[:3], vocab, params,
                                  model_config, k=20)
    assert set(reports) == {"current", "window", "full"}
    for report in reports.values():
        data = report.to_dict()
        assert 0.0 <= data["mrr"] <= 1.0


def test_pooling_mode_changes_embeddings(qt_setup):
    passages, conversations, vocab, model_config, params = qt_setup
    from convsearch.querytypes import embed_queries
    encoded = [encode_query_input(conversations[0], 3, "full", vocab,
                                  model_config.context_len)]
    span_pooled = embed_queries(encoded, params, model_config, "query_span")
    whole_pooled = embed_queries(encoded, params, model_config, "whole_sequence")
    assert not np.allclose(span_pooled, whole_pooled)
