import numpy as np
import pytest

from convsearch.corpus import GenConfig, corpus_text_lines, generate
from convsearch.model import ModelConfig, init_params
from convsearch.tokenizer import build_vocab


@pytest.fixture(scope="session")
def small_corpus():
    """A compact corpus with both topic shifts and pronoun queries."""
    config = GenConfig(
        n_topics=4, passages_per_topic=20, n_conversations=30,
        turns_min=3, turns_max=5, p_shift=0.3, p_anaphora=0.6, seed=11,
    )
    return generate(config)


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    passages, conversations = small_corpus
    return build_vocab(corpus_text_lines(passages, conversations))


@pytest.fixture(scope="session")
def tiny_model(small_vocab):
    """Untrained tiny model over the small corpus vocabulary."""
    config = ModelConfig(vocab_size=len(small_vocab), d_model=16, n_layers=1,
                         n_heads=2, context_len=128, ff_mult=2)
    params = init_params(config, seed=3)
    return config, params


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
