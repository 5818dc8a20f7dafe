"""Ranking metrics for conversational retrieval runs.

A run maps (conversation_id, turn_index) to a ranked list of (passage_id,
score); qrels map the same keys to binary gold sets. Alongside the standard
MRR / nDCG@3 / Hit@k suite this module computes the Historical Interference
Rate: how often the top-k contains a passage that was gold for an earlier
turn of the conversation but is not gold now.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

HIT_KS = (5, 20, 100)
HIR_KS = (20, 100)
MRR_CUTOFF = 100
PER_TURN_K = 100


class RunFormatError(ValueError):
    """Raised when a run or qrels file is malformed."""


def _check_run(run: dict, qrels: dict) -> None:
    if not run:
        raise ValueError("empty run")
    for key in run:
        if key not in qrels:
            raise KeyError(f"run query {key} has no qrels entry")


def mrr(run: dict, qrels: dict, cutoff: int = MRR_CUTOFF) -> float:
    """Mean reciprocal rank of the first relevant passage within the cutoff."""
    _check_run(run, qrels)
    total = 0.0
    for key, ranking in run.items():
        gold = qrels[key]
        for rank, (pid, _score) in enumerate(ranking[:cutoff], start=1):
            if pid in gold:
                total += 1.0 / rank
                break
    return total / len(run)


def ndcg_at_k(run: dict, qrels: dict, k: int = 3) -> float:
    """Binary-gain nDCG: DCG over the top k divided by the ideal DCG."""
    _check_run(run, qrels)
    total = 0.0
    for key, ranking in run.items():
        gold = qrels[key]
        dcg = sum(
            1.0 / math.log2(rank + 1)
            for rank, (pid, _score) in enumerate(ranking[:k], start=1)
            if pid in gold
        )
        ideal = sum(1.0 / math.log2(rank + 1) for rank in range(1, min(k, len(gold)) + 1))
        total += dcg / ideal
    return total / len(run)


def hit_at_k(run: dict, qrels: dict, k: int) -> float:
    """Fraction of queries with at least one gold passage in the top k."""
    _check_run(run, qrels)
    hits = sum(
        1 for key, ranking in run.items()
        if any(pid in qrels[key] for pid, _ in ranking[:k])
    )
    return hits / len(run)


def _interference_set(key: tuple, qrels: dict) -> frozenset:
    """Gold passages of earlier turns that are not gold for the current turn."""
    conversation_id, turn_index = key
    prior: set = set()
    for earlier in range(1, turn_index):
        prior.update(qrels.get((conversation_id, earlier), ()))
    return frozenset(prior - qrels[key])


def hir_at_k(run: dict, qrels: dict, k: int):
    """Historical Interference Rate at k.

    A query at turn n counts as interfered when its top-k contains any
    passage gold for a turn before n but not for n itself; turn 1 is always
    0. Returns (per-turn means, mean over all queries).
    """
    _check_run(run, qrels)
    per_turn_hits: dict = {}
    per_turn_counts: dict = {}
    interfered = 0
    for key, ranking in run.items():
        _conversation_id, turn_index = key
        if turn_index < 1:
            raise ValueError(f"turn index must be >= 1, got {turn_index}")
        interference = _interference_set(key, qrels)
        flag = int(any(pid in interference for pid, _ in ranking[:k]))
        interfered += flag
        per_turn_hits[turn_index] = per_turn_hits.get(turn_index, 0) + flag
        per_turn_counts[turn_index] = per_turn_counts.get(turn_index, 0) + 1
    per_turn = {
        t: per_turn_hits[t] / per_turn_counts[t] for t in sorted(per_turn_counts)
    }
    return per_turn, interfered / len(run)


def lexical_match(generated: str, references: Sequence[str]) -> int:
    """1 if any reference span occurs in the generation after lowercasing and
    whitespace collapsing, else 0."""
    if not references:
        raise ValueError("references must be non-empty")
    normalized = " ".join(generated.lower().split())
    for ref in references:
        if " ".join(ref.lower().split()) in normalized:
            return 1
    return 0


@dataclass
class EvalReport:
    mrr: float
    ndcg_at_3: float
    hit_at_k: dict
    hir_at_k: dict
    per_turn: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"mrr": self.mrr, "ndcg_at_3": self.ndcg_at_3}
        for k in sorted(self.hit_at_k):
            out[f"hit_at_{k}"] = self.hit_at_k[k]
        for k in sorted(self.hir_at_k):
            out[f"hir_at_{k}"] = self.hir_at_k[k]
        out["per_turn"] = {
            name: {str(t): v for t, v in curve.items()}
            for name, curve in self.per_turn.items()
        }
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def evaluate_run(
    run: dict,
    qrels: dict,
    collection=None,
    hit_ks: Sequence[int] = HIT_KS,
    hir_ks: Sequence[int] = HIR_KS,
) -> EvalReport:
    """All metrics in one pass, plus per-turn Hit@100 and HIR@100 curves."""
    _check_run(run, qrels)
    if collection is not None:
        known = {p.id for p in collection}
        for key, ranking in run.items():
            for pid, _ in ranking:
                if pid not in known:
                    raise ValueError(f"run entry {key} ranks unknown passage {pid!r}")

    per_turn_hit: dict = {}
    per_turn_counts: dict = {}
    for key, ranking in run.items():
        turn_index = key[1]
        flag = int(any(pid in qrels[key] for pid, _ in ranking[:PER_TURN_K]))
        per_turn_hit[turn_index] = per_turn_hit.get(turn_index, 0) + flag
        per_turn_counts[turn_index] = per_turn_counts.get(turn_index, 0) + 1
    hir_curve, _ = hir_at_k(run, qrels, PER_TURN_K)

    return EvalReport(
        mrr=mrr(run, qrels),
        ndcg_at_3=ndcg_at_k(run, qrels, 3),
        hit_at_k={k: hit_at_k(run, qrels, k) for k in hit_ks},
        hir_at_k={k: hir_at_k(run, qrels, k)[1] for k in hir_ks},
        per_turn={
            f"hit_at_{PER_TURN_K}": {
                t: per_turn_hit[t] / per_turn_counts[t] for t in sorted(per_turn_counts)
            },
            f"hir_at_{PER_TURN_K}": hir_curve,
        },
    )


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def _format_key(key: tuple) -> str:
    return f"{key[0]}:{key[1]}"


def _parse_key(raw: str, path: str, line_no: int) -> tuple:
    head, _, tail = raw.rpartition(":")
    if not head:
        raise RunFormatError(f"{path}:{line_no}: bad query key {raw!r}")
    try:
        return head, int(tail)
    except ValueError as exc:
        raise RunFormatError(f"{path}:{line_no}: bad turn index in {raw!r}") from exc


def write_run(run: dict, path: str, tag: str = "convsearch") -> None:
    """TREC-style lines: "conversation_id:turn Q0 passage_id rank score tag"."""
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(run):
            for rank, (pid, score) in enumerate(run[key], start=1):
                fh.write(f"{_format_key(key)} Q0 {pid} {rank} {score!r} {tag}\n")


def read_run(path: str) -> dict:
    raw: dict = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise RunFormatError(f"{path}:{line_no}: expected 6 fields, got {len(parts)}")
            key = _parse_key(parts[0], path, line_no)
            try:
                rank = int(parts[3])
                score = float(parts[4])
            except ValueError as exc:
                raise RunFormatError(f"{path}:{line_no}: bad rank or score") from exc
            raw.setdefault(key, []).append((rank, parts[2], score))
    run: dict = {}
    for key, rows in raw.items():
        rows.sort(key=lambda r: r[0])
        run[key] = [(pid, score) for _rank, pid, score in rows]
    return run


def write_qrels(qrels: dict, path: str) -> None:
    """Lines: "conversation_id:turn 0 passage_id 1"."""
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(qrels):
            for pid in sorted(qrels[key]):
                fh.write(f"{_format_key(key)} 0 {pid} 1\n")


def read_qrels(path: str) -> dict:
    qrels: dict = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise RunFormatError(f"{path}:{line_no}: expected 4 fields, got {len(parts)}")
            key = _parse_key(parts[0], path, line_no)
            qrels.setdefault(key, set()).add(parts[2])
    return {key: frozenset(pids) for key, pids in qrels.items()}


def qrels_from_conversations(conversations) -> dict:
    """Binary qrels keyed by (conversation_id, 1-based turn index)."""
    qrels: dict = {}
    for conversation in conversations:
        for turn_index, turn in enumerate(conversation.turns, start=1):
            qrels[(conversation.id, turn_index)] = frozenset(turn.gold_passage_ids)
    return qrels


def write_report(report: EvalReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")
