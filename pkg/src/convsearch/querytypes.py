"""Query-input strategies for retrieval: current / window / full.

current embeds the bare query, window adds the last few query-response turns,
full the whole conversation prefix. The same machinery drives evaluation
runs: every turn of every conversation becomes one retrieval query.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .corpus import Conversation, Passage
from .evaluator import EvalReport, evaluate_run, qrels_from_conversations
from .index import EmbeddingStore, build_store, search
from .model import ModelConfig, forward_batch, pool_span_batch
from .tokenizer import PAD, EncodedDialogue, Vocab, encode_conversation

QUERY_TYPES = ("current", "window", "full")
POOLING_MODES = ("query_span", "whole_sequence")
DEFAULT_WINDOW_TURNS = 3


@dataclass
class QueryTypeConfig:
    mode: str = "full"
    window_turns: int = DEFAULT_WINDOW_TURNS

    def validate(self) -> None:
        if self.mode not in QUERY_TYPES:
            raise ValueError(f"unknown query type {self.mode!r}")
        if self.window_turns < 1:
            raise ValueError("window_turns must be >= 1")


def build_query_input(
    conversation: Conversation,
    turn_index: int,
    mode: str,
    window_turns: int = DEFAULT_WINDOW_TURNS,
) -> list:
    """Turn window [(q, a), ..., (q_target, None)] for the chosen strategy."""
    if mode not in QUERY_TYPES:
        raise ValueError(f"unknown query type {mode!r}")
    if not 1 <= turn_index <= len(conversation.turns):
        raise IndexError(f"turn {turn_index} out of range for {conversation.id}")
    turns = conversation.turns
    target = turns[turn_index - 1]
    if mode == "current":
        history: Sequence = ()
    elif mode == "window":
        first = max(0, turn_index - 1 - window_turns)
        history = turns[first:turn_index - 1]
    else:
        history = turns[:turn_index - 1]
    window = [(t.query, t.response) for t in history]
    window.append((target.query, None))
    return window


def encode_query_input(
    conversation: Conversation,
    turn_index: int,
    mode: str,
    vocab: Vocab,
    context_len: int,
    window_turns: int = DEFAULT_WINDOW_TURNS,
) -> EncodedDialogue:
    """Encode the strategy's window, dropping oldest turns if it overflows."""
    window = build_query_input(conversation, turn_index, mode, window_turns)
    while True:
        encoded = encode_conversation(window, vocab)
        if encoded.length <= context_len or len(window) == 1:
            if encoded.length > context_len:
                raise ValueError(
                    f"{conversation.id} turn {turn_index}: bare query exceeds context"
                )
            return encoded
        window = window[1:]


def embed_queries(
    encoded: Sequence[EncodedDialogue],
    params: dict,
    config: ModelConfig,
    pooling: str = "query_span",
    batch_size: int = 32,
) -> np.ndarray:
    """Retrieval embeddings for encoded dialogues, batched, no gradients."""
    if pooling not in POOLING_MODES:
        raise ValueError(f"unknown pooling mode {pooling!r}")
    out = np.zeros((len(encoded), config.d_model), dtype=np.float32)
    with ad.no_grad():
        for lo in range(0, len(encoded), batch_size):
            chunk = encoded[lo:lo + batch_size]
            time = max(e.length for e in chunk)
            ids = np.full((len(chunk), time), PAD, dtype=np.int64)
            spans = []
            for b, e in enumerate(chunk):
                ids[b, : e.length] = e.ids
                if pooling == "query_span":
                    spans.append(e.current_query_span)
                else:
                    spans.append((0, e.length))
            hidden, _ = forward_batch(ids, params, config, want_logits=False)
            out[lo:lo + len(chunk)] = pool_span_batch(hidden, spans).data
    return out


def run_retrieval(
    conversations: Sequence[Conversation],
    store: EmbeddingStore,
    vocab: Vocab,
    params: dict,
    config: ModelConfig,
    mode: str = "full",
    k: int = 100,
    window_turns: int = DEFAULT_WINDOW_TURNS,
    pooling: str = "query_span",
) -> dict:
    """Ranked run over every turn of every conversation."""
    keys = []
    encoded = []
    for conversation in conversations:
        for turn_index in range(1, len(conversation.turns) + 1):
            keys.append((conversation.id, turn_index))
            encoded.append(encode_query_input(
                conversation, turn_index, mode, vocab, config.context_len, window_turns
            ))
    embeddings = embed_queries(encoded, params, config, pooling)
    run: dict = {}
    for key, embedding in zip(keys, embeddings):
        run[key] = list(search(store, embedding, k).entries)
    return run


def compare_query_types(
    collection: Sequence[Passage],
    conversations: Sequence[Conversation],
    vocab: Vocab,
    params: dict,
    config: ModelConfig,
    k: int = 100,
    window_turns: int = DEFAULT_WINDOW_TURNS,
    pooling: str = "query_span",
    store: Optional[EmbeddingStore] = None,
) -> Dict[str, EvalReport]:
    """Evaluate all three query-input strategies on one shared store and qrels."""
    if store is None:
        store = build_store(collection, vocab, params, config)
    qrels = qrels_from_conversations(conversations)
    reports: Dict[str, EvalReport] = {}
    for mode in QUERY_TYPES:
        run = run_retrieval(
            conversations, store, vocab, params, config,
            mode=mode, k=k, window_turns=window_turns, pooling=pooling,
        )
        reports[mode] = evaluate_run(run, qrels)
    return reports
