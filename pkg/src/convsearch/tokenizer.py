"""Word-level vocabulary with dialogue-role markers.

Encoding a conversation yields the token ids plus the span of the final
query's content tokens: that span is what the retrieval embedding pools over,
so it excludes the role markers around it.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

PAD, UNK, BOS, USER, ASSISTANT, PASSAGE = range(6)

SPECIAL_TOKENS = ("<pad>", "<unk>", "<bos>", "<user>", "<assistant>", "<passage>")

# markers that never render back to text
_SILENT_SPECIALS = {PAD, BOS}


class ContextOverflowError(ValueError):
    """Encoded sequence does not fit the model context window."""


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace split; the only tokenization rule in this lab."""
    return text.lower().split()


class Vocab:
    """Immutable token <-> id mapping; special ids occupy 0..5 in fixed order."""

    def __init__(self, tokens: Sequence[str]):
        self.id_to_token: list[str] = list(SPECIAL_TOKENS) + list(tokens)
        self.token_to_id: dict[str, int] = {
            tok: i for i, tok in enumerate(self.id_to_token)
        }
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id_for(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def token_for(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.id_to_token):
            raise ValueError(f"token id {token_id} out of range (vocab size {len(self)})")
        return self.id_to_token[token_id]

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for token in self.id_to_token:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            lines = [line.rstrip("\n") for line in fh]
        if tuple(lines[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError(f"vocab file {path} does not start with the special tokens")
        return cls(lines[len(SPECIAL_TOKENS):])


def build_vocab(corpus_lines: Iterable[str], min_count: int = 1) -> Vocab:
    """Count words over a text stream and keep those with frequency >= min_count.

    Ordering is frequency descending, ties lexicographic, so the same corpus
    always produces byte-identical vocab files.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter = Counter()
    seen_any = False
    for line in corpus_lines:
        seen_any = True
        counts.update(tokenize(line))
    if not seen_any:
        raise ValueError("empty corpus stream")
    kept = [tok for tok, c in counts.items() if c >= min_count and tok not in SPECIAL_TOKENS]
    kept.sort(key=lambda tok: (-counts[tok], tok))
    return Vocab(kept)


def encode_text(text: str, vocab: Vocab) -> list[int]:
    """Plain word encoding, out-of-vocabulary words become UNK."""
    return [vocab.id_for(tok) for tok in tokenize(text)]


def decode(ids: Sequence[int], vocab: Vocab) -> str:
    """Inverse of encode_text for in-vocab text; role markers render readably,
    BOS/PAD render to nothing."""
    words = []
    for token_id in ids:
        token = vocab.token_for(token_id)
        if token_id in _SILENT_SPECIALS:
            continue
        words.append(token)
    return " ".join(words)


@dataclass(frozen=True)
class EncodedDialogue:
    """Token ids for [history..., current query] plus the current-query span.

    The span is half-open over content tokens of the final query only; it is
    always a suffix of ids. query_length counts those content tokens, length
    the whole encoding including markers.
    """

    ids: tuple
    current_query_span: tuple

    @property
    def length(self) -> int:
        return len(self.ids)

    @property
    def query_length(self) -> int:
        start, end = self.current_query_span
        return end - start

    def __post_init__(self):
        start, end = self.current_query_span
        if end != len(self.ids):
            raise ValueError("current-query span must be a suffix of the encoding")
        if not 0 <= start < end:
            raise ValueError(f"bad span ({start}, {end}) for length {len(self.ids)}")


@dataclass(frozen=True)
class EncodedPassage:
    """Token ids [BOS, PASSAGE, words...] plus the span of the content words."""

    ids: tuple
    content_span: tuple

    @property
    def length(self) -> int:
        return len(self.ids)


def encode_conversation(
    turns: Sequence[tuple],
    vocab: Vocab,
    context_len: Optional[int] = None,
) -> EncodedDialogue:
    """Encode [(q, a), ..., (q_last, None)] into ids with the final-query span.

    Layout: BOS, then USER + query tokens and ASSISTANT + response tokens per
    turn; the final turn must have response None and contributes the span.
    """
    if not turns:
        raise ValueError("no turns to encode")
    if turns[-1][1] is not None:
        raise ValueError("last turn must be a query without response")
    ids: list[int] = [BOS]
    span_start = span_end = 0
    for index, (query, response) in enumerate(turns):
        is_last = index == len(turns) - 1
        if not is_last and response is None:
            raise ValueError(f"turn {index} lacks a response but is not last")
        query_ids = encode_text(query, vocab)
        if not query_ids:
            raise ValueError(f"turn {index} has an empty query")
        ids.append(USER)
        if is_last:
            span_start = len(ids)
        ids.extend(query_ids)
        if is_last:
            span_end = len(ids)
        else:
            ids.append(ASSISTANT)
            ids.extend(encode_text(response, vocab))
    if context_len is not None and len(ids) > context_len:
        raise ContextOverflowError(
            f"encoded conversation has {len(ids)} tokens, limit {context_len};"
            " drop oldest turns to fit"
        )
    return EncodedDialogue(ids=tuple(ids), current_query_span=(span_start, span_end))


def encode_passage(
    text: str, vocab: Vocab, context_len: Optional[int] = None
) -> EncodedPassage:
    """Encode a passage as [BOS, PASSAGE, words...] with the content span."""
    word_ids = encode_text(text, vocab)
    if not word_ids:
        raise ValueError("empty passage text")
    ids = [BOS, PASSAGE] + word_ids
    if context_len is not None and len(ids) > context_len:
        raise ContextOverflowError(
            f"encoded passage has {len(ids)} tokens, limit {context_len}"
        )
    return EncodedPassage(ids=tuple(ids), content_span=(2, len(ids)))
