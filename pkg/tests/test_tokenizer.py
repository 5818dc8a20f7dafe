import numpy as np
import pytest

from convsearch import tokenizer as tok
from convsearch.corpus import GenConfig, generate
from convsearch.tokenizer import (
    ASSISTANT,
    BOS,
    USER,
    ContextOverflowError,
    Vocab,
    build_vocab,
    decode,
    encode_conversation,
    encode_passage,
    encode_text,
)


def test_build_vocab_orders_by_frequency_then_lexicographic():
    vocab = build_vocab(["a a b"], min_count=1)
    assert vocab.id_for("a") < vocab.id_for("b")
    assert vocab.id_for("a") == len(tok.SPECIAL_TOKENS)


def test_build_vocab_min_count_excludes_rare_words():
    vocab = build_vocab(["a a b"], min_count=2)
    assert vocab.id_for("a") != tok.UNK
    assert vocab.id_for("b") == tok.UNK


def test_build_vocab_rejects_empty_stream():
    with pytest.raises(ValueError):
        build_vocab([])


def test_vocab_file_deterministic(tmp_path):
    lines = ["the stone gate", "a gate of stone", "stone stone"]
    path_a = tmp_path / "a.vocab"
    path_b = tmp_path / "b.vocab"
    build_vocab(lines).save(path_a)
    build_vocab(list(lines)).save(path_b)
    assert path_a.read_bytes() == path_b.read_bytes()


def test_vocab_file_has_specials_first(tmp_path):
    path = tmp_path / "v.vocab"
    build_vocab(["hello world"]).save(path)
    lines = path.read_text().splitlines()
    assert tuple(lines[:6]) == tok.SPECIAL_TOKENS
    reloaded = Vocab.load(path)
    assert reloaded.id_to_token == build_vocab(["hello world"]).id_to_token


def test_vocab_load_rejects_bad_specials(tmp_path):
    path = tmp_path / "bad.vocab"
    path.write_text("<pad>\n<unk>\nwrong\n")
    with pytest.raises(ValueError):
        Vocab.load(path)


def test_encode_single_turn_layout():
    vocab = build_vocab(["hi"])
    encoded = encode_conversation([("hi", None)], vocab)
    assert list(encoded.ids) == [BOS, USER, vocab.id_for("hi")]
    assert encoded.current_query_span == (2, 3)
    assert encoded.query_length == 1
    assert encoded.length == 3


def test_encode_two_turns_span_covers_last_query_only():
    vocab = build_vocab(["what is the gate", "a stone arch", "and the wall"])
    encoded = encode_conversation(
        [("what is the gate", "a stone arch"), ("and the wall", None)], vocab
    )
    start, end = encoded.current_query_span
    assert end == encoded.length
    span_ids = encoded.ids[start:end]
    assert list(span_ids) == encode_text("and the wall", vocab)
    # markers framing the query are excluded from the span
    assert encoded.ids[start - 1] == USER


def test_span_roundtrip_over_random_conversations():
    passages, conversations = generate(GenConfig(
        n_topics=5, passages_per_topic=10, n_conversations=280,
        turns_min=2, turns_max=6, p_shift=0.4, p_anaphora=0.5, seed=99,
    ))
    texts = [p.text for p in passages]
    for c in conversations:
        for t in c.turns:
            texts.append(t.query)
            texts.append(t.response)
    vocab = build_vocab(texts)
    checked = 0
    for c in conversations:
        window = []
        for t in c.turns:
            window.append((t.query, t.response))
        for n in range(1, len(c.turns) + 1):
            turns = [(q, a) for q, a in window[:n - 1]] + [(window[n - 1][0], None)]
            encoded = encode_conversation(turns, vocab)
            start, end = encoded.current_query_span
            assert end == encoded.length
            assert encoded.query_length >= 1
            assert decode(encoded.ids[start:end], vocab) == c.turns[n - 1].query.lower()
            checked += 1
    assert checked >= 1000


def test_decode_bos_is_empty():
    vocab = build_vocab(["x"])
    assert decode([BOS], vocab) == ""


def test_decode_inverts_encode_for_in_vocab_text():
    vocab = build_vocab(["the quick brown fox"])
    text = "the quick brown fox"
    assert decode(encode_text(text, vocab), vocab) == text


def test_decode_renders_oov_as_unk_marker():
    vocab = build_vocab(["known words only"])
    ids = encode_text("known mystery words", vocab)
    assert decode(ids, vocab) == "known <unk> words"


def test_decode_rejects_out_of_range_id():
    vocab = build_vocab(["a"])
    with pytest.raises(ValueError):
        decode([len(vocab)], vocab)


def test_encode_rejects_response_on_last_turn():
    vocab = build_vocab(["a b"])
    with pytest.raises(ValueError):
        encode_conversation([("a", "b")], vocab)


def test_encode_rejects_missing_intermediate_response():
    vocab = build_vocab(["a b"])
    with pytest.raises(ValueError):
        encode_conversation([("a", None), ("b", None)], vocab)


def test_encode_rejects_empty_query():
    vocab = build_vocab(["a"])
    with pytest.raises(ValueError):
        encode_conversation([("", None)], vocab)


def test_encode_context_overflow_mentions_truncation():
    vocab = build_vocab(["one two three four five"])
    with pytest.raises(ContextOverflowError):
        encode_conversation([("one two three four five", None)], vocab, context_len=4)


def test_encode_passage_layout_and_span():
    vocab = build_vocab(["stone gate of the north"])
    encoded = encode_passage("stone gate", vocab)
    assert encoded.ids[0] == BOS and encoded.ids[1] == tok.PASSAGE
    start, end = encoded.content_span
    assert decode(encoded.ids[start:end], vocab) == "stone gate"


def test_encode_passage_rejects_empty():
    vocab = build_vocab(["a"])
    with pytest.raises(ValueError):
        encode_passage("", vocab)


def test_conversation_encoding_includes_assistant_marker():
    vocab = build_vocab(["ask tell"])
    encoded = encode_conversation([("ask", "tell"), ("ask", None)], vocab)
    assert ASSISTANT in encoded.ids
