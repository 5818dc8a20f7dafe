import numpy as np
import pytest

from convsearch.autodiff import NumericsError, Tensor
from convsearch.corpus import GenConfig, corpus_text_lines, generate
from convsearch.losses import LossWeights
from convsearch.model import ModelConfig, generate_greedy, load_checkpoint
from convsearch.evaluator import lexical_match
from convsearch.sampler import sample_instance
from convsearch.tokenizer import build_vocab, decode
from convsearch.trainer import (
    AblationFlags,
    AdamState,
    TrainConfig,
    adam_step,
    init_adam_state,
    render_ablation_table,
    response_perplexity,
    run_ablation_suite,
    train,
)


def micro_setup(seed=3, n_conversations=12):
    config = GenConfig(n_topics=3, passages_per_topic=10,
                       n_conversations=n_conversations,
                       turns_min=3, turns_max=4, p_shift=0.3, p_anaphora=0.6,
                       seed=seed)
    passages, conversations = generate(config)
    vocab = build_vocab(corpus_text_lines(passages, conversations))
    model_config = ModelConfig(vocab_size=len(vocab), d_model=16, n_layers=1,
                               n_heads=2, context_len=128, ff_mult=2)
    return passages, conversations, vocab, model_config


def quick_config(**overrides):
    base = dict(epochs=2, batch_size=4, learning_rate=3e-3, seed=0,
                weights=LossWeights(tau=0.05), k_rand=2)
    base.update(overrides)
    return TrainConfig(**base)


# --- Adam ------------------------------------------------------------------

def make_params(rng):
    return {
        "w": Tensor(rng.normal(size=(3, 2)).astype(np.float32), requires_grad=True),
        "b": Tensor(rng.normal(size=(2,)).astype(np.float32), requires_grad=True),
    }


def test_adam_zero_gradient_keeps_parameters(rng):
    params = make_params(rng)
    before = {k: p.data.copy() for k, p in params.items()}
    state = init_adam_state(params)
    grads = {k: np.zeros_like(p.data) for k, p in params.items()}
    adam_step(params, grads, state, lr=0.1)
    for k in params:
        np.testing.assert_array_equal(params[k].data, before[k])


def test_adam_first_step_is_signed_learning_rate(rng):
    params = make_params(rng)
    before = {k: p.data.copy() for k, p in params.items()}
    state = init_adam_state(params)
    grads = {k: rng.normal(size=p.data.shape).astype(np.float32)
             for k, p in params.items()}
    lr = 0.01
    adam_step(params, grads, state, lr=lr)
    for k in params:
        g = grads[k]
        expected = before[k] - lr * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(params[k].data, expected, atol=1e-6)


def test_adam_two_runs_identical(rng):
    grads_seq = [
        {"w": rng.normal(size=(3, 2)).astype(np.float32),
         "b": rng.normal(size=(2,)).astype(np.float32)}
        for _ in range(5)
    ]

    def run():
        local = np.random.default_rng(7)
        params = make_params(local)
        state = init_adam_state(params)
        for grads in grads_seq:
            adam_step(params, grads, state, lr=0.05)
        return params, state

    params_a, state_a = run()
    params_b, state_b = run()
    for k in params_a:
        np.testing.assert_array_equal(params_a[k].data, params_b[k].data)
        np.testing.assert_array_equal(state_a.m[k], state_b.m[k])
        np.testing.assert_array_equal(state_a.v[k], state_b.v[k])
    assert state_a.t == state_b.t == 5


def test_adam_rejects_non_finite_gradients(rng):
    params = make_params(rng)
    state = init_adam_state(params)
    grads = {k: np.zeros_like(p.data) for k, p in params.items()}
    grads["w"][0, 0] = np.nan
    with pytest.raises(NumericsError):
        adam_step(params, grads, state, lr=0.1)


# --- training loop ---------------------------------------------------------

def test_ccl_only_total_equals_ccl_each_step():
    passages, conversations, vocab, model_config = micro_setup()
    config = quick_config(
        epochs=1,
        ablation=AblationFlags(ccl_on=True, igl_on=False, gen_on=False),
    )
    result = train(passages, conversations, vocab, model_config, config)
    for entry in result.step_logs:
        assert entry.l_total == pytest.approx(entry.l_ccl, abs=1e-12)
        assert entry.l_igl == 0.0 and entry.l_g == 0.0


def test_step_log_identity_holds():
    passages, conversations, vocab, model_config = micro_setup()
    config = quick_config(epochs=1)
    result = train(passages, conversations, vocab, model_config, config)
    for entry in result.step_logs:
        weights = LossWeights(lambda_igl=entry.lambda_igl, lambda_g=entry.lambda_g)
        assert entry.breakdown().identity_residual(weights) < 1e-9
        assert np.isfinite(entry.grad_norm)


def test_training_reduces_contrastive_loss():
    passages, conversations, vocab, model_config = micro_setup(n_conversations=20)
    config = quick_config(epochs=3, batch_size=8, learning_rate=3e-3, seed=1)
    result = train(passages, conversations, vocab, model_config, config)
    logs = result.step_logs
    assert len(logs) >= 20
    first = np.mean([e.l_ccl for e in logs[:5]])
    last = np.mean([e.l_ccl for e in logs[-5:]])
    assert last < first


def test_training_is_bitwise_deterministic():
    passages, conversations, vocab, model_config = micro_setup()
    config = quick_config(epochs=1)
    a = train(passages, conversations, vocab, model_config, config)
    b = train(passages, conversations, vocab, model_config, config)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name].data, b.params[name].data)
    assert [e.l_total for e in a.step_logs] == [e.l_total for e in b.step_logs]


def test_checkpoint_save_load_save_byte_identical(tmp_path):
    passages, conversations, vocab, model_config = micro_setup()
    config = quick_config(epochs=1)
    first = tmp_path / "model.ckpt"
    second = tmp_path / "again.ckpt"
    train(passages, conversations, vocab, model_config, config,
          checkpoint_path=str(first))
    loaded_config, loaded_params, extra = load_checkpoint(str(first))
    from convsearch.model import save_checkpoint
    save_checkpoint(str(second), loaded_config, loaded_params, extra=extra)
    assert first.read_bytes() == second.read_bytes()


def test_training_log_is_jsonl(tmp_path):
    import json
    passages, conversations, vocab, model_config = micro_setup()
    log_path = tmp_path / "steps.jsonl"
    config = quick_config(epochs=1)
    result = train(passages, conversations, vocab, model_config, config,
                   log_path=str(log_path))
    lines = log_path.read_text().splitlines()
    assert len(lines) == len(result.step_logs)
    record = json.loads(lines[0])
    assert set(record) == {"step", "l_ccl", "l_igl", "l_g", "l_total",
                           "grad_norm", "wall_ms", "lambda_igl", "lambda_g"}


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(ablation=AblationFlags(ccl_on=False)).validate()
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1).validate()
    with pytest.raises(ValueError):
        TrainConfig(sampling_mode="sometimes").validate()
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0).validate()


def test_gradient_clipping_caps_norm():
    passages, conversations, vocab, model_config = micro_setup()
    config = quick_config(epochs=1, grad_clip=0.5)
    result = train(passages, conversations, vocab, model_config, config)
    for entry in result.step_logs:
        assert entry.grad_norm <= 0.5 + 1e-6


def test_response_perplexity_finite_and_decreases_with_training():
    passages, conversations, vocab, model_config = micro_setup(n_conversations=16)
    held_out = conversations[12:]
    trained = train(passages, conversations[:12], vocab, model_config,
                    quick_config(epochs=4, batch_size=8, seed=2))
    from convsearch.model import init_params
    fresh = init_params(model_config, seed=2)
    ppl_fresh = response_perplexity(passages, held_out, vocab, fresh, model_config)
    ppl_trained = response_perplexity(passages, held_out, vocab,
                                      trained.params, model_config)
    assert np.isfinite(ppl_fresh) and np.isfinite(ppl_trained)
    assert 1.0 < ppl_trained < ppl_fresh


def test_overfit_single_pair_reproduces_response():
    # one conversation, one turn: after enough steps greedy decoding from the
    # [dialogue, passage, ASSISTANT] prompt must replay the gold response
    passages, conversations, vocab, model_config = micro_setup(seed=9,
                                                               n_conversations=2)
    micro = [conversations[0]]
    config = quick_config(
        epochs=250, batch_size=2, learning_rate=1e-2, seed=4,
        weights=LossWeights(lambda_igl=1.0, lambda_g=0.5, tau=0.05),
    )
    result = train(passages, micro, vocab, model_config, config)
    assert len(result.step_logs) >= 500

    by_id = {p.id: p for p in passages}
    rng = np.random.default_rng(0)
    inst = sample_instance(micro[0], 1, vocab, by_id, model_config.context_len,
                           rng, mode="full_history")
    mask = np.asarray(inst.gen_mask)
    prompt = list(np.asarray(inst.gen_ids)[~mask])
    response_len = int(mask.sum())
    generated = generate_greedy(prompt, result.params, model_config,
                                max_new=response_len + 4)
    text = decode(generated, vocab)
    gold = micro[0].turns[0].response.lower()
    assert lexical_match(text, [gold]) == 1


# --- ablation suite --------------------------------------------------------

def ablation_setup():
    config = GenConfig(n_topics=3, passages_per_topic=10, n_conversations=40,
                       turns_min=3, turns_max=4, p_shift=0.3, p_anaphora=0.6,
                       seed=31)
    passages, conversations = generate(config)
    vocab = build_vocab(corpus_text_lines(passages, conversations))
    model_config = ModelConfig(vocab_size=len(vocab), d_model=16, n_layers=1,
                               n_heads=2, context_len=128, ff_mult=2)
    return passages, conversations[:10], conversations[10:], vocab, model_config


def test_ablation_suite_structure_and_shared_eval():
    passages, train_convs, eval_convs, vocab, model_config = ablation_setup()
    rows = run_ablation_suite(
        passages, train_convs, eval_convs, vocab, model_config,
        quick_config(epochs=1), seeds=(1,), axes=("losses",), eval_k=20,
    )
    assert [r.label for r in rows] == ["ccl", "ccl_igl", "full"]
    assert all(r.axis == "losses" for r in rows)
    table = render_ablation_table(rows)
    assert "ccl_igl" in table and "ndcg@3" in table


def test_ablation_suite_lambda_grid_shape():
    passages, train_convs, eval_convs, vocab, model_config = ablation_setup()
    rows = run_ablation_suite(
        passages, train_convs, eval_convs, vocab, model_config,
        quick_config(epochs=1), seeds=(1,), axes=("lambdas",), eval_k=20,
    )
    labels = [r.label for r in rows]
    assert labels == ["igl=1,g=0.05", "igl=1,g=0.1", "igl=1,g=0.3",
                      "igl=0.5,g=0.1", "igl=2,g=0.1"]


def test_ablation_suite_requires_enough_eval_queries():
    passages, train_convs, eval_convs, vocab, model_config = ablation_setup()
    with pytest.raises(ValueError):
        run_ablation_suite(passages, train_convs, eval_convs[:3], vocab,
                           model_config, quick_config(), seeds=(1,))


def test_ablation_suite_rejects_unknown_axis():
    passages, train_convs, eval_convs, vocab, model_config = ablation_setup()
    with pytest.raises(ValueError):
        run_ablation_suite(passages, train_convs, eval_convs, vocab,
                           model_config, quick_config(), seeds=(1,),
                           axes=("phase-of-moon",))
