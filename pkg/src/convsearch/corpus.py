"""Synthetic multi-turn conversational search data.

Passages state one (entity, attribute, value) fact each. Conversations walk
over those facts with controllable topic shifts and two kinds of
context-dependent queries: pronoun turns keep the entity implicit ("what
about its climate") and elliptical turns keep the attribute implicit ("and
for krela"). Every turn stores an exact self-contained rewrite, so gold
relevance and rewrite supervision are unambiguous. Entity names are coined
words, unique across topics; attribute values come from small real-word
pools, so the two can never collide.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class CorpusFormatError(ValueError):
    """Raised when a corpus file violates the JSONL schema."""


@dataclass(frozen=True)
class Passage:
    id: str
    text: str
    topic_id: int


@dataclass(frozen=True)
class Turn:
    query: str
    response: str
    gold_passage_ids: tuple
    rewrite: str
    topic_id: int


@dataclass(frozen=True)
class Conversation:
    id: str
    turns: tuple

    def __len__(self) -> int:
        return len(self.turns)


@dataclass
class GenConfig:
    n_topics: int = 8
    passages_per_topic: int = 40
    n_conversations: int = 50
    turns_min: int = 3
    turns_max: int = 5
    p_shift: float = 0.3
    p_anaphora: float = 0.6
    p_ellipsis: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        for name in ("p_shift", "p_anaphora", "p_ellipsis"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.turns_min > self.turns_max:
            raise ValueError("turns_min must be <= turns_max")
        for field in ("n_topics", "passages_per_topic", "n_conversations", "turns_min"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be >= 1")
        if self.n_topics < 2 and self.p_shift > 0:
            raise ValueError("topic shifts need at least 2 topics")


ATTRIBUTES = (
    "population", "capital", "climate", "currency", "founder",
    "elevation", "mascot", "anthem", "harvest", "festival",
)

_VALUE_POOLS = {
    "population": ("sparse", "dense", "growing", "shrinking", "booming",
                   "stable", "scattered", "crowded", "dwindling", "surging"),
    "capital": ("rivermouth", "stonegate", "highcourt", "seaward", "northhold",
                "brightwall", "oldport", "redford", "greenvale", "suncrest"),
    "climate": ("arid", "humid", "temperate", "frigid", "tropical",
                "foggy", "rainy", "snowy", "mild", "stormy"),
    "currency": ("shells", "beads", "tokens", "scrip", "crowns",
                 "pearls", "ingots", "chits", "stamps", "marks"),
    "founder": ("aldric", "merewen", "osric", "thyra", "branwen",
                "cedric", "ysolde", "garrick", "elswyth", "rowena"),
    "elevation": ("lowland", "highland", "steep", "flat", "rolling",
                  "towering", "sunken", "raised", "gentle", "sheer"),
    "mascot": ("falcon", "otter", "lynx", "heron", "badger",
               "viper", "raven", "ibex", "marten", "osprey"),
    "anthem": ("dawnsong", "tidecall", "emberhymn", "skychant", "stonemarch",
               "leafround", "starcarol", "windlay", "frostair", "suntune"),
    "harvest": ("barley", "rye", "olives", "grapes", "flax",
                "millet", "saffron", "hops", "lentils", "dates"),
    "festival": ("lanternfair", "frostfeast", "harvestmoon", "springtide",
                 "emberfest", "seafair", "kiteday", "songweek", "torchnight",
                 "bloomfair"),
}

_QUERY_TEMPLATES = (
    "what is the {attr} of {entity}",
    "tell me the {attr} of {entity}",
    "i want to know the {attr} of {entity}",
)
_ANAPHORIC_TEMPLATES = (
    "what about its {attr}",
    "and its {attr}",
    "how about its {attr}",
)
# attribute carried over from the previous turn, only the entity is named
_ELLIPTICAL_TEMPLATES = (
    "what about {entity}",
    "and for {entity}",
    "how about {entity}",
)
_PASSAGE_TEMPLATES = (
    "{entity} : the {attr} of {entity} is {value}",
    "records about {entity} state that the {attr} of {entity} is {value}",
)
_REWRITE_TEMPLATE = "what is the {attr} of {entity}"

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r",
           "s", "t", "v", "z", "br", "dr", "gl", "kr", "pl", "tr")
_NUCLEI = ("a", "e", "i", "o", "u", "ae", "ia", "ou")
_CODAS = ("", "n", "r", "l", "s", "th", "m", "x")

_RESERVED = set(ATTRIBUTES)
for pool in _VALUE_POOLS.values():
    _RESERVED.update(pool)


def _coin_entities(count: int, rng: np.random.Generator) -> list:
    """Coin `count` unique entity names that collide with nothing reserved."""
    names: list = []
    seen = set(_RESERVED)
    while len(names) < count:
        parts = [
            _ONSETS[rng.integers(len(_ONSETS))],
            _NUCLEI[rng.integers(len(_NUCLEI))],
            _ONSETS[rng.integers(len(_ONSETS))],
            _NUCLEI[rng.integers(len(_NUCLEI))],
            _CODAS[rng.integers(len(_CODAS))],
        ]
        name = "".join(parts)
        if name not in seen:
            seen.add(name)
            names.append(name)
    return names


@dataclass(frozen=True)
class _Fact:
    passage_id: str
    entity: str
    attr: str
    value: str
    topic_id: int


def _build_collection(config: GenConfig, rng: np.random.Generator):
    """Lay out passages_per_topic (entity, attribute) facts for every topic."""
    entities_per_topic = math.ceil(config.passages_per_topic / len(ATTRIBUTES))
    all_entities = _coin_entities(config.n_topics * entities_per_topic, rng)
    passages: list = []
    facts_by_topic: dict = {}
    counter = 0
    for topic in range(config.n_topics):
        entities = all_entities[topic * entities_per_topic:(topic + 1) * entities_per_topic]
        facts: dict = {}
        made = 0
        for entity in entities:
            for attr in ATTRIBUTES:
                if made == config.passages_per_topic:
                    break
                pool = _VALUE_POOLS[attr]
                value = pool[rng.integers(len(pool))]
                pid = f"p{counter:05d}"
                counter += 1
                template = _PASSAGE_TEMPLATES[rng.integers(len(_PASSAGE_TEMPLATES))]
                passages.append(Passage(
                    id=pid,
                    text=template.format(entity=entity, attr=attr, value=value),
                    topic_id=topic,
                ))
                facts.setdefault(entity, {})[attr] = _Fact(pid, entity, attr, value, topic)
                made += 1
            if made == config.passages_per_topic:
                break
        facts_by_topic[topic] = facts
    return passages, facts_by_topic


def _pick_fact(facts, entity: str, used: set, rng: np.random.Generator):
    """Choose an unused attribute of `entity`, falling back to any attribute."""
    attrs = facts[entity]
    fresh = [a for a in ATTRIBUTES if a in attrs and (entity, a) not in used]
    candidates = fresh if fresh else [a for a in ATTRIBUTES if a in attrs]
    attr = candidates[rng.integers(len(candidates))]
    return attrs[attr]


def generate(config: GenConfig):
    """Generate (passages, conversations), deterministic for a fixed seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    passages, facts_by_topic = _build_collection(config, rng)

    conversations: list = []
    for conv_index in range(config.n_conversations):
        n_turns = int(rng.integers(config.turns_min, config.turns_max + 1))
        turns: list = []
        used: set = set()
        topic = int(rng.integers(config.n_topics))
        entity = None
        prev_attr = None
        for turn_number in range(1, n_turns + 1):
            kind = "explicit"
            if turn_number == 1:
                entity = _pick_entity(facts_by_topic[topic], rng)
            elif rng.random() < config.p_shift:
                topic = _pick_other_topic(topic, config.n_topics, rng)
                entity = _pick_entity(facts_by_topic[topic], rng)
            else:
                # draw both decisions every time so the stream stays aligned
                r_pronoun = rng.random()
                r_ellipsis = rng.random()
                facts = facts_by_topic[topic]
                if r_pronoun < config.p_anaphora and _has_fresh_attr(facts, entity, used):
                    kind = "pronoun"
                else:
                    peers = _ellipsis_candidates(facts, entity, prev_attr, used)
                    if r_ellipsis < config.p_ellipsis and peers:
                        kind = "ellipsis"
                        entity = peers[rng.integers(len(peers))]
                    else:
                        entity = _pick_entity(facts, rng)

            if kind == "ellipsis":
                fact = facts_by_topic[topic][entity][prev_attr]
            else:
                fact = _pick_fact(facts_by_topic[topic], entity, used, rng)
            used.add((entity, fact.attr))
            prev_attr = fact.attr

            if kind == "pronoun":
                template = _ANAPHORIC_TEMPLATES[rng.integers(len(_ANAPHORIC_TEMPLATES))]
                query = template.format(attr=fact.attr)
                rewrite = _REWRITE_TEMPLATE.format(attr=fact.attr, entity=entity)
            elif kind == "ellipsis":
                template = _ELLIPTICAL_TEMPLATES[rng.integers(len(_ELLIPTICAL_TEMPLATES))]
                query = template.format(entity=entity)
                rewrite = _REWRITE_TEMPLATE.format(attr=fact.attr, entity=entity)
            else:
                template = _QUERY_TEMPLATES[rng.integers(len(_QUERY_TEMPLATES))]
                query = template.format(attr=fact.attr, entity=entity)
                rewrite = query
            response = f"the {fact.attr} of {entity} is {fact.value}"
            turns.append(Turn(
                query=query,
                response=response,
                gold_passage_ids=(fact.passage_id,),
                rewrite=rewrite,
                topic_id=topic,
            ))
        conversations.append(Conversation(id=f"c{conv_index:04d}", turns=tuple(turns)))
    return passages, conversations


def _pick_entity(facts: dict, rng: np.random.Generator) -> str:
    entities = sorted(facts)
    return entities[rng.integers(len(entities))]


def _pick_other_topic(topic: int, n_topics: int, rng: np.random.Generator) -> int:
    others = [t for t in range(n_topics) if t != topic]
    return others[rng.integers(len(others))]


def _has_fresh_attr(facts: dict, entity: str, used: set) -> bool:
    return any((entity, a) not in used for a in facts.get(entity, {}))


def _ellipsis_candidates(facts: dict, entity, prev_attr, used: set) -> list:
    """Other entities of the topic that still have the previous turn's
    attribute unasked; an elliptical turn carries that attribute over."""
    if prev_attr is None:
        return []
    return [
        e for e in sorted(facts)
        if e != entity and prev_attr in facts[e] and (e, prev_attr) not in used
    ]


def oracle_rewrite(conversation: Conversation, turn_index: int) -> str:
    """Self-contained form of the turn's query; equals the query itself when
    the query already names its entity. turn_index is 1-based."""
    if not 1 <= turn_index <= len(conversation.turns):
        raise IndexError(f"turn {turn_index} out of range for {conversation.id}")
    return conversation.turns[turn_index - 1].rewrite


# ---------------------------------------------------------------------------
# JSONL persistence
# ---------------------------------------------------------------------------

PASSAGES_FILE = "passages.jsonl"
CONVERSATIONS_FILE = "conversations.jsonl"


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def write_corpus(passages: Sequence[Passage], conversations: Sequence[Conversation],
                 out_dir: str) -> None:
    """Write passages.jsonl and conversations.jsonl with a fixed field order."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, PASSAGES_FILE), "w", encoding="utf-8") as fh:
        for p in passages:
            fh.write(_dump({"id": p.id, "text": p.text, "topic_id": p.topic_id}) + "\n")
    with open(os.path.join(out_dir, CONVERSATIONS_FILE), "w", encoding="utf-8") as fh:
        for c in conversations:
            record = {
                "id": c.id,
                "turns": [
                    {
                        "query": t.query,
                        "response": t.response,
                        "gold_passage_ids": list(t.gold_passage_ids),
                        "rewrite": t.rewrite,
                        "topic_id": t.topic_id,
                    }
                    for t in c.turns
                ],
            }
            fh.write(_dump(record) + "\n")


def _require(record: dict, key: str, kind, path: str, line: int):
    if key not in record:
        raise CorpusFormatError(f"{path}:{line}: missing field {key!r}")
    value = record[key]
    if not isinstance(value, kind):
        raise CorpusFormatError(
            f"{path}:{line}: field {key!r} must be {kind.__name__}, got {type(value).__name__}"
        )
    return value


def load_and_validate(corpus_dir: str):
    """Load a corpus directory, checking schema and referential integrity."""
    passages_path = os.path.join(corpus_dir, PASSAGES_FILE)
    conversations_path = os.path.join(corpus_dir, CONVERSATIONS_FILE)
    passages: list = []
    ids = set()
    for line_no, record in _iter_jsonl(passages_path):
        pid = _require(record, "id", str, passages_path, line_no)
        text = _require(record, "text", str, passages_path, line_no)
        topic_id = _require(record, "topic_id", int, passages_path, line_no)
        if not text:
            raise CorpusFormatError(f"{passages_path}:{line_no}: empty passage text")
        if pid in ids:
            raise CorpusFormatError(f"{passages_path}:{line_no}: duplicate passage id {pid!r}")
        ids.add(pid)
        passages.append(Passage(id=pid, text=text, topic_id=topic_id))

    conversations: list = []
    conv_ids = set()
    for line_no, record in _iter_jsonl(conversations_path):
        cid = _require(record, "id", str, conversations_path, line_no)
        if cid in conv_ids:
            raise CorpusFormatError(
                f"{conversations_path}:{line_no}: duplicate conversation id {cid!r}"
            )
        conv_ids.add(cid)
        raw_turns = _require(record, "turns", list, conversations_path, line_no)
        if not raw_turns:
            raise CorpusFormatError(f"{conversations_path}:{line_no}: conversation has no turns")
        turns = []
        for raw in raw_turns:
            if not isinstance(raw, dict):
                raise CorpusFormatError(f"{conversations_path}:{line_no}: turn is not an object")
            query = _require(raw, "query", str, conversations_path, line_no)
            response = _require(raw, "response", str, conversations_path, line_no)
            gold = _require(raw, "gold_passage_ids", list, conversations_path, line_no)
            rewrite = _require(raw, "rewrite", str, conversations_path, line_no)
            topic_id = _require(raw, "topic_id", int, conversations_path, line_no)
            if not gold:
                raise CorpusFormatError(
                    f"{conversations_path}:{line_no}: empty gold_passage_ids"
                )
            for pid in gold:
                if pid not in ids:
                    raise CorpusFormatError(
                        f"{conversations_path}:{line_no}: gold passage id {pid!r}"
                        " not present in the collection"
                    )
            if not rewrite:
                raise CorpusFormatError(f"{conversations_path}:{line_no}: empty rewrite")
            turns.append(Turn(
                query=query,
                response=response,
                gold_passage_ids=tuple(gold),
                rewrite=rewrite,
                topic_id=topic_id,
            ))
        conversations.append(Conversation(id=cid, turns=tuple(turns)))
    return passages, conversations


def _iter_jsonl(path: str):
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{line_no}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise CorpusFormatError(f"{path}:{line_no}: record is not an object")
            yield line_no, record


def corpus_text_lines(passages: Sequence[Passage],
                      conversations: Sequence[Conversation]) -> Iterable[str]:
    """Every text field, for vocabulary building."""
    for p in passages:
        yield p.text
    for c in conversations:
        for t in c.turns:
            yield t.query
            yield t.response
            yield t.rewrite


def count_topic_transitions(conversations: Sequence[Conversation]):
    """(number of shifted transitions, total transitions) across conversations."""
    shifts = 0
    total = 0
    for c in conversations:
        for prev, cur in zip(c.turns, c.turns[1:]):
            total += 1
            if prev.topic_id != cur.topic_id:
                shifts += 1
    return shifts, total
