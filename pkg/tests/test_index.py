import numpy as np
import pytest

from convsearch import autodiff as ad
from convsearch.index import (
    EmbeddingStore,
    StoreFormatError,
    build_store,
    load_store,
    save_store,
    search,
)
from convsearch.model import embed_passage
from convsearch.tokenizer import encode_passage


def make_store(matrix, ids=None):
    matrix = np.asarray(matrix, dtype=np.float32)
    matrix = matrix / np.linalg.norm(matrix, axis=1, keepdims=True)
    ids = ids or [f"p{i:03d}" for i in range(matrix.shape[0])]
    return EmbeddingStore(ids=ids, matrix=matrix, dim=matrix.shape[1])


def brute_force(store, query, k):
    q = np.asarray(query, dtype=np.float64)
    q = q / np.sqrt((q * q).sum())
    scored = []
    for pid, row in zip(store.ids, store.matrix):
        scored.append((pid, float((row.astype(np.float64) * q).sum())))
    scored.sort(key=lambda e: (-e[1], e[0]))
    return scored[:k]


def test_single_passage_store(small_corpus, small_vocab, tiny_model):
    passages, _ = small_corpus
    config, params = tiny_model
    store = build_store(passages[:1], small_vocab, params, config)
    assert store.count == 1 and store.ids == [passages[0].id]
    assert np.linalg.norm(store.matrix[0]) == pytest.approx(1.0, abs=1e-5)


def test_store_rows_unit_norm(small_corpus, small_vocab, tiny_model):
    passages, _ = small_corpus
    config, params = tiny_model
    store = build_store(passages[:40], small_vocab, params, config)
    norms = np.linalg.norm(store.matrix, axis=1)
    np.testing.assert_allclose(norms, np.ones(40), atol=1e-5)


def test_store_rebuild_is_byte_identical(small_corpus, small_vocab, tiny_model,
                                         tmp_path):
    passages, _ = small_corpus
    config, params = tiny_model
    a_path = tmp_path / "a.store"
    b_path = tmp_path / "b.store"
    save_store(build_store(passages[:25], small_vocab, params, config), a_path)
    save_store(build_store(passages[:25], small_vocab, params, config), b_path)
    assert a_path.read_bytes() == b_path.read_bytes()


def test_store_row_matches_direct_recomputation(small_corpus, small_vocab,
                                                tiny_model):
    passages, _ = small_corpus
    config, params = tiny_model
    store = build_store(passages[:10], small_vocab, params, config)
    k = 7
    with ad.no_grad():
        direct = embed_passage(
            encode_passage(passages[k].text, small_vocab), params, config
        ).data.astype(np.float32)
    direct = direct / np.linalg.norm(direct)
    np.testing.assert_allclose(store.matrix[k], direct, atol=1e-6)


def test_search_trivial_two_passages():
    store = make_store([[1.0, 0.0], [0.0, 1.0]], ids=["p1", "p2"])
    result = search(store, [1.0, 0.0], k=1)
    assert result.entries == (("p1", pytest.approx(1.0)),)


def test_search_k_larger_than_count_returns_all():
    store = make_store(np.eye(4))
    result = search(store, [1.0, 0.2, 0.1, 0.0], k=100)
    assert len(result.entries) == 4


def test_search_matches_brute_force_random_stores(rng):
    for trial in range(5):
        matrix = rng.normal(size=(1000, 32))
        store = make_store(matrix)
        for _ in range(5):
            query = rng.normal(size=32)
            ours = search(store, query, k=10).entries
            reference = brute_force(store, query, k=10)
            assert [pid for pid, _ in ours] == [pid for pid, _ in reference]
            for (_, a), (_, b) in zip(ours, reference):
                assert a == b


def test_search_prefix_property(rng):
    store = make_store(rng.normal(size=(200, 8)))
    query = rng.normal(size=8)
    shorter = search(store, query, k=5).entries
    longer = search(store, query, k=9).entries
    assert longer[:5] == shorter


def test_search_scores_in_cosine_range(rng):
    store = make_store(rng.normal(size=(300, 16)))
    for _ in range(20):
        result = search(store, rng.normal(size=16), k=300)
        scores = [s for _, s in result.entries]
        assert all(-1.0 - 1e-6 <= s <= 1.0 + 1e-6 for s in scores)
        assert scores == sorted(scores, reverse=True)


def test_search_tie_break_ascending_id():
    store = make_store([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]],
                       ids=["pz", "pa", "pm"])
    result = search(store, [1.0, 0.0], k=3)
    assert [pid for pid, _ in result.entries] == ["pa", "pm", "pz"]


def test_search_rank1_equals_argmax_oracle(rng):
    store = make_store(rng.normal(size=(500, 16)))
    for _ in range(100):
        query = rng.normal(size=16)
        top = search(store, query, k=1).entries[0]
        q = query / np.linalg.norm(query)
        scores = store.matrix @ q.astype(np.float32)
        best = scores.max()
        best_ids = sorted(store.ids[i] for i in np.flatnonzero(scores == best))
        assert top[0] == best_ids[0]


def test_search_rejects_zero_query():
    store = make_store(np.eye(3))
    with pytest.raises(ValueError):
        search(store, [0.0, 0.0, 0.0], k=1)


def test_search_rejects_dim_mismatch():
    store = make_store(np.eye(3))
    with pytest.raises(ValueError):
        search(store, [1.0, 0.0], k=1)


def test_search_rejects_bad_k():
    store = make_store(np.eye(3))
    with pytest.raises(ValueError):
        search(store, [1.0, 0.0, 0.0], k=0)


def test_save_load_roundtrip_bit_exact(tmp_path, rng):
    store = make_store(rng.normal(size=(50, 12)))
    first = tmp_path / "one.store"
    second = tmp_path / "two.store"
    save_store(store, first)
    loaded = load_store(first)
    assert loaded.ids == store.ids
    np.testing.assert_array_equal(loaded.matrix, store.matrix)
    save_store(loaded, second)
    assert first.read_bytes() == second.read_bytes()


def test_load_rejects_bad_magic(tmp_path, rng):
    path = tmp_path / "bad.store"
    save_store(make_store(rng.normal(size=(3, 4))), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(StoreFormatError):
        load_store(path)


def test_load_rejects_truncated_file(tmp_path, rng):
    path = tmp_path / "short.store"
    save_store(make_store(rng.normal(size=(5, 4))), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-7])
    with pytest.raises(StoreFormatError):
        load_store(path)


def test_load_rejects_trailing_bytes(tmp_path, rng):
    path = tmp_path / "long.store"
    save_store(make_store(rng.normal(size=(5, 4))), path)
    path.write_bytes(path.read_bytes() + b"x")
    with pytest.raises(StoreFormatError):
        load_store(path)
