import numpy as np
import pytest

from convsearch import autodiff as ad
from convsearch.autodiff import Tensor
from convsearch.model import (
    CheckpointFormatError,
    ModelConfig,
    embed_passage,
    embed_passages_batch,
    extract_query_embedding,
    forward,
    forward_batch,
    generate_greedy,
    init_params,
    load_checkpoint,
    parameter_count,
    pool_span_batch,
    save_checkpoint,
)
from convsearch.tokenizer import ContextOverflowError, encode_passage


@pytest.fixture(scope="module")
def setup():
    config = ModelConfig(vocab_size=31, d_model=16, n_layers=2, n_heads=2,
                         context_len=48, ff_mult=2)
    params = init_params(config, seed=9)
    return config, params


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, d_model=10, n_heads=3).validate()
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, dropout=1.0).validate()


def test_causality_prefix_logits_invariant(setup, rng):
    config, params = setup
    ids = list(rng.integers(0, config.vocab_size, size=12))
    with ad.no_grad():
        _, logits = forward(ids, params, config)
    base = logits.data.copy()
    for k in (4, 7, 11):
        perturbed = list(ids)
        perturbed[k] = int((perturbed[k] + 5) % config.vocab_size)
        with ad.no_grad():
            _, changed = forward(perturbed, params, config)
        np.testing.assert_array_equal(changed.data[:k], base[:k])
        assert not np.array_equal(changed.data[k:], base[k:])


def test_zero_layer_model_is_embeddings_plus_positions():
    config = ModelConfig(vocab_size=11, d_model=8, n_layers=0, n_heads=2,
                         context_len=16)
    params = init_params(config, seed=0)
    ids = [1, 4, 7]
    with ad.no_grad():
        hidden, _ = forward(ids, params, config)
    expected = params["tok_emb"].data[ids] + params["pos_emb"].data[:3]
    np.testing.assert_allclose(hidden.data, expected, atol=1e-7)


def test_logit_rows_softmax_to_one(setup, rng):
    config, params = setup
    ids = list(rng.integers(0, config.vocab_size, size=9))
    with ad.no_grad():
        _, logits = forward(ids, params, config)
    probs = ad.softmax(logits).data
    np.testing.assert_allclose(probs.sum(axis=-1), np.ones(9), atol=1e-5)


def test_forward_rejects_overflow(setup):
    config, params = setup
    with pytest.raises(ContextOverflowError):
        forward([0] * (config.context_len + 1), params, config)


def test_extract_query_embedding_examples():
    hidden = Tensor(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
    np.testing.assert_allclose(extract_query_embedding(hidden, 2).data, [4.0, 5.0])
    np.testing.assert_allclose(extract_query_embedding(hidden, 3).data, [3.0, 4.0])
    np.testing.assert_allclose(extract_query_embedding(hidden, 1).data, [5.0, 6.0])
    with pytest.raises(ValueError):
        extract_query_embedding(hidden, 0)
    with pytest.raises(ValueError):
        extract_query_embedding(hidden, 4)


def test_pooling_is_linear(rng):
    h1 = rng.normal(size=(6, 4))
    h2 = rng.normal(size=(6, 4))
    m = 3
    pool = lambda h: extract_query_embedding(Tensor(h), m).data
    np.testing.assert_allclose(pool(2.5 * h1), 2.5 * pool(h1), atol=1e-12)
    np.testing.assert_allclose(pool(h1 + h2), pool(h1) + pool(h2), atol=1e-12)


def test_pooling_gradient_touches_only_span_rows(rng):
    hidden = Tensor(rng.normal(size=(5, 3)), requires_grad=True, dtype=np.float64)
    pooled = extract_query_embedding(hidden, 2)
    loss = ad.tsum(pooled * pooled)
    loss.backward()
    np.testing.assert_array_equal(hidden.grad[:3], np.zeros((3, 3)))
    assert np.abs(hidden.grad[3:]).sum() > 0
    # finite-difference spot check on one in-span and one out-of-span entry
    def f(h):
        with ad.no_grad():
            p = extract_query_embedding(Tensor(h), 2)
            return float((p.data ** 2).sum())
    eps = 1e-6
    for (row, col), expect_zero in (((0, 0), True), ((4, 1), False)):
        up = hidden.data.copy(); up[row, col] += eps
        down = hidden.data.copy(); down[row, col] -= eps
        numeric = (f(up) - f(down)) / (2 * eps)
        if expect_zero:
            assert abs(numeric) < 1e-9
        else:
            assert ad.relative_error(float(hidden.grad[row, col]), numeric) < 1e-4


def test_embed_passage_matches_row_mean_oracle(setup, small_vocab):
    config, params = setup
    config = ModelConfig(vocab_size=len(small_vocab), d_model=16, n_layers=2,
                         n_heads=2, context_len=48, ff_mult=2)
    params = init_params(config, seed=9)
    encoded = encode_passage("records about oak state that the gate is tall",
                             small_vocab)
    with ad.no_grad():
        embedding = embed_passage(encoded, params, config)
        hidden, _ = forward(encoded.ids, params, config)
    start, end = encoded.content_span
    oracle = hidden.data[start:end].mean(axis=0)
    np.testing.assert_allclose(embedding.data, oracle, atol=1e-6)


def test_embed_passage_deterministic(setup, small_vocab):
    config, params = setup
    config = ModelConfig(vocab_size=len(small_vocab), d_model=16, n_layers=2,
                         n_heads=2, context_len=48, ff_mult=2)
    params = init_params(config, seed=9)
    encoded = encode_passage("the stone gate", small_vocab)
    with ad.no_grad():
        a = embed_passage(encoded, params, config).data
        b = embed_passage(encoded, params, config).data
    np.testing.assert_array_equal(a, b)


def test_batched_forward_matches_single(setup, rng):
    config, params = setup
    seq_a = list(rng.integers(0, config.vocab_size, size=10))
    seq_b = list(rng.integers(0, config.vocab_size, size=6))
    with ad.no_grad():
        hidden_a, logits_a = forward(seq_a, params, config)
        hidden_b, logits_b = forward(seq_b, params, config)
        ids = np.zeros((2, 10), dtype=np.int64)
        ids[0] = seq_a
        ids[1, :6] = seq_b
        hidden, logits = forward_batch(ids, params, config)
    np.testing.assert_allclose(hidden.data[0], hidden_a.data, atol=1e-5)
    np.testing.assert_allclose(hidden.data[1, :6], hidden_b.data, atol=1e-5)
    np.testing.assert_allclose(logits.data[1, :6], logits_b.data, atol=1e-4)


def test_pool_span_batch_matches_per_row(rng):
    hidden = Tensor(rng.normal(size=(3, 7, 4)).astype(np.float32))
    spans = [(0, 7), (2, 5), (6, 7)]
    pooled = pool_span_batch(hidden, spans)
    for b, (start, end) in enumerate(spans):
        np.testing.assert_allclose(
            pooled.data[b], hidden.data[b, start:end].mean(axis=0), atol=1e-6
        )


def test_generate_greedy_zero_budget(setup):
    config, params = setup
    assert generate_greedy([2, 3, 7], params, config, max_new=0) == []


def test_generate_greedy_deterministic(setup):
    config, params = setup
    a = generate_greedy([2, 3, 7], params, config, max_new=8)
    b = generate_greedy([2, 3, 7], params, config, max_new=8)
    assert a == b


def test_generate_greedy_overflow(setup):
    config, params = setup
    with pytest.raises(ContextOverflowError):
        generate_greedy([0] * config.context_len, params, config, max_new=1)


def test_checkpoint_roundtrip_bit_exact(setup, tmp_path):
    config, params = setup
    first = tmp_path / "a.ckpt"
    second = tmp_path / "b.ckpt"
    save_checkpoint(first, config, params, extra={"pooling_mode": "query_span"})
    loaded_config, loaded_params, extra = load_checkpoint(first)
    assert loaded_config == config
    assert extra == {"pooling_mode": "query_span"}
    for name, p in params.items():
        np.testing.assert_array_equal(loaded_params[name].data, p.data)
    save_checkpoint(second, loaded_config, loaded_params,
                    extra={"pooling_mode": "query_span"})
    assert first.read_bytes() == second.read_bytes()


def test_checkpoint_rejects_bad_magic(setup, tmp_path):
    config, params = setup
    path = tmp_path / "bad.ckpt"
    save_checkpoint(path, config, params)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_checkpoint_rejects_truncation(setup, tmp_path):
    config, params = setup
    path = tmp_path / "short.ckpt"
    save_checkpoint(path, config, params)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_parameter_count_small(setup):
    config, params = setup
    assert parameter_count(params) == sum(p.data.size for p in params.values())
