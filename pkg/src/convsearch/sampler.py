"""Training-instance construction with dynamic dialogue history sampling.

For a target turn n > 1, the history window starts at a turn drawn uniformly
from {1, ..., n-1}; across epochs the same target sees different amounts of
context. full_history mode always starts at turn 1 (the non-augmented
baseline). Windows that exceed the context are shrunk by advancing the start,
never by cutting inside a turn.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .corpus import Conversation, Passage, oracle_rewrite
from .tokenizer import (
    ASSISTANT,
    ContextOverflowError,
    EncodedDialogue,
    PASSAGE,
    Vocab,
    encode_conversation,
    encode_text,
)

SAMPLING_MODES = ("dynamic", "full_history")


@dataclass(frozen=True)
class TrainingInstance:
    conversation_id: str
    turn_index: int        # 1-based target turn
    window_start: int      # 1-based first turn included in the dialogue
    dialogue: EncodedDialogue
    rewrite: EncodedDialogue
    positive_id: str
    gold_ids: frozenset
    gen_ids: tuple
    gen_mask: tuple
    negative_ids: tuple = ()


@dataclass(frozen=True)
class Batch:
    instances: tuple

    @property
    def size(self) -> int:
        return len(self.instances)


def _window_turns(conversation: Conversation, start: int, target: int) -> list:
    turns = conversation.turns
    window = [(t.query, t.response) for t in turns[start - 1:target - 1]]
    window.append((turns[target - 1].query, None))
    return window


def _gen_sequence(dialogue: EncodedDialogue, passage: Passage, response: str,
                  vocab: Vocab):
    """[dialogue..., PASSAGE, passage words, ASSISTANT, response words] with the
    prediction mask over the response words."""
    passage_ids = encode_text(passage.text, vocab)
    response_ids = encode_text(response, vocab)
    if not response_ids:
        raise ValueError("turn has an empty response, nothing to predict")
    ids = list(dialogue.ids) + [PASSAGE] + passage_ids + [ASSISTANT] + response_ids
    mask = [False] * (len(ids) - len(response_ids)) + [True] * len(response_ids)
    return tuple(ids), tuple(mask)


def sample_instance(
    conversation: Conversation,
    turn_index: int,
    vocab: Vocab,
    passages_by_id: dict,
    context_len: int,
    rng: np.random.Generator,
    mode: str = "dynamic",
) -> TrainingInstance:
    """Build one training instance for (conversation, turn_index)."""
    if mode not in SAMPLING_MODES:
        raise ValueError(f"unknown sampling mode {mode!r}")
    n = turn_index
    if not 1 <= n <= len(conversation.turns):
        raise IndexError(f"turn {n} out of range for {conversation.id}")
    turn = conversation.turns[n - 1]
    if not turn.gold_passage_ids:
        raise ValueError(f"{conversation.id} turn {n} has no gold passage")
    positive_id = sorted(turn.gold_passage_ids)[0]
    positive = passages_by_id[positive_id]

    if n == 1 or mode == "full_history":
        start = 1
    else:
        start = int(rng.integers(1, n))

    # advance the start until both the dialogue and its generation sequence fit
    while True:
        dialogue = encode_conversation(_window_turns(conversation, start, n), vocab)
        gen_ids, gen_mask = _gen_sequence(dialogue, positive, turn.response, vocab)
        if len(gen_ids) <= context_len and dialogue.length <= context_len:
            break
        if start == n:
            raise ContextOverflowError(
                f"{conversation.id} turn {n}: even the bare query does not fit"
                f" context_len {context_len}"
            )
        start += 1

    rewrite = encode_conversation([(oracle_rewrite(conversation, n), None)], vocab)
    return TrainingInstance(
        conversation_id=conversation.id,
        turn_index=n,
        window_start=start,
        dialogue=dialogue,
        rewrite=rewrite,
        positive_id=positive_id,
        gold_ids=frozenset(turn.gold_passage_ids),
        gen_ids=gen_ids,
        gen_mask=gen_mask,
    )


def _random_negatives(
    instance: TrainingInstance,
    passage_ids: Sequence[str],
    k_rand: int,
    rng: np.random.Generator,
) -> list:
    order = rng.permutation(len(passage_ids))
    picked: list = []
    for idx in order:
        pid = passage_ids[idx]
        if pid not in instance.gold_ids:
            picked.append(pid)
            if len(picked) == k_rand:
                break
    return picked


def build_epoch(
    conversations: Sequence[Conversation],
    passages: Sequence[Passage],
    vocab: Vocab,
    rng: np.random.Generator,
    batch_size: int,
    context_len: int,
    k_rand: int = 4,
    mode: str = "dynamic",
) -> list:
    """One shuffled epoch: an instance per (conversation, turn), batched,
    with negatives = other in-batch positives plus k_rand random passages."""
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2 for in-batch negatives")
    if k_rand < 1:
        raise ValueError("k_rand must be >= 1")
    if len(passages) < k_rand + 1:
        raise ValueError(
            f"collection of {len(passages)} passages cannot supply {k_rand} negatives"
        )
    passages_by_id = {p.id: p for p in passages}
    passage_ids = [p.id for p in passages]

    instances = [
        sample_instance(c, n, vocab, passages_by_id, context_len, rng, mode)
        for c in conversations
        for n in range(1, len(c.turns) + 1)
    ]
    order = rng.permutation(len(instances))
    shuffled = [instances[i] for i in order]

    batches: list = []
    for lo in range(0, len(shuffled), batch_size):
        chunk = shuffled[lo:lo + batch_size]
        finished = []
        for inst in chunk:
            negatives: list = []
            for other in chunk:
                if other is inst:
                    continue
                pid = other.positive_id
                if pid not in inst.gold_ids and pid not in negatives:
                    negatives.append(pid)
            for pid in _random_negatives(inst, passage_ids, k_rand, rng):
                if pid not in negatives:
                    negatives.append(pid)
            finished.append(replace(inst, negative_ids=tuple(negatives)))
        batches.append(Batch(instances=tuple(finished)))
    return batches
