"""Command-line pipeline: corpus generation through training to evaluation.

Every stage reads and writes explicit paths in documented formats, so runs
can be scripted and reproduced exactly. Exit codes: 0 success, 1 usage
error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

from . import checks
from .config import gen_config_from, model_config_from, parse_config_file, train_config_from
from .corpus import corpus_text_lines, generate, load_and_validate, write_corpus
from .evaluator import (
    evaluate_run,
    qrels_from_conversations,
    read_qrels,
    read_run,
    write_qrels,
    write_report,
    write_run,
)
from .index import build_store, load_store, save_store, search
from .model import load_checkpoint
from .querytypes import QUERY_TYPES, embed_queries, run_retrieval
from .tokenizer import Vocab, build_vocab, encode_conversation
from .trainer import render_ablation_table, run_ablation_suite, train

QRELS_FILE = "qrels.txt"


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this pipeline reserves 2 for runtime."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self._print_and_code(message))

    def _print_and_code(self, message) -> int:
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="convsearch",
                     description="desk-scale conversational dense retrieval lab")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus directory")
    p.add_argument("--config", help="flat key=value file with generation keys")
    p.add_argument("--seed", type=int, help="override the generation seed")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("build-vocab", help="build a vocabulary file from a corpus")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="vocab file to write")
    p.add_argument("--min-count", type=int, default=1, help="minimum word frequency")

    p = sub.add_parser("train", help="train a retriever on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--config", help="flat key=value file with model/train keys")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--log", help="JSONL step log to write")

    p = sub.add_parser("embed-passages", help="embed the collection into a store")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="store file to write")

    p = sub.add_parser("search", help="retrieve top-k passages for every turn")
    p.add_argument("--corpus", required=True, help="conversations to query with")
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--query-type", choices=QUERY_TYPES, default="full",
                   help="query input: bare query, 3-turn window, or full history")
    p.add_argument("--out", required=True, help="run file to write")

    p = sub.add_parser("eval", help="score a run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--corpus", help="optional corpus directory for id validation")
    p.add_argument("--out", required=True, help="report JSON to write")

    p = sub.add_parser("ablate", help="train and evaluate an ablation grid")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--config", help="flat key=value file with model/train keys")
    p.add_argument("--seed", type=int, help="base seed; grid uses seed, seed+1, seed+2")
    p.add_argument("--axes", default="losses",
                   help="comma list from: losses,sampling,pooling,lambdas")
    p.add_argument("--eval-split", type=int, default=25,
                   help="conversations held out (from the end) for evaluation")
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--out", help="table file to write")

    p = sub.add_parser("grad-check", help="finite-difference checks for ops and losses")
    p.add_argument("--epsilon", type=float, default=None,
                   help="central-difference step for the loss checks"
                        " (default: a small/large pair)")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("demo", help="interactive multi-turn retrieval")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--corpus", help="optional corpus directory to show passage text")
    p.add_argument("--k", type=int, default=5)

    return parser


def _load_config_mapping(path: Optional[str]) -> dict:
    return parse_config_file(path) if path else {}


def cmd_gen_corpus(args) -> int:
    config = gen_config_from(_load_config_mapping(args.config), seed_override=args.seed)
    passages, conversations = generate(config)
    write_corpus(passages, conversations, args.out)
    write_qrels(qrels_from_conversations(conversations),
                os.path.join(args.out, QRELS_FILE))
    n_queries = sum(len(c.turns) for c in conversations)
    print(f"wrote {len(passages)} passages, {len(conversations)} conversations"
          f" ({n_queries} queries) to {args.out}")
    return 0


def cmd_build_vocab(args) -> int:
    passages, conversations = load_and_validate(args.corpus)
    vocab = build_vocab(corpus_text_lines(passages, conversations),
                        min_count=args.min_count)
    vocab.save(args.out)
    print(f"wrote vocab of {len(vocab)} tokens to {args.out}")
    return 0


def cmd_train(args) -> int:
    passages, conversations = load_and_validate(args.corpus)
    vocab = Vocab.load(args.vocab)
    mapping = _load_config_mapping(args.config)
    model_config = model_config_from(mapping, vocab_size=len(vocab))
    train_config = train_config_from(mapping, seed_override=args.seed)
    result = train(passages, conversations, vocab, model_config, train_config,
                   checkpoint_path=args.out, log_path=args.log)
    last = result.step_logs[-1]
    print(f"trained {len(result.step_logs)} steps;"
          f" final loss {last.l_total:.4f} (ccl {last.l_ccl:.4f})"
          f" -> {args.out}")
    return 0


def cmd_embed_passages(args) -> int:
    passages, _ = load_and_validate(args.corpus)
    vocab = Vocab.load(args.vocab)
    model_config, params, _extra = load_checkpoint(args.checkpoint)
    store = build_store(passages, vocab, params, model_config)
    save_store(store, args.out)
    print(f"embedded {store.count} passages (dim {store.dim}) -> {args.out}")
    return 0


def cmd_search(args) -> int:
    _passages, conversations = load_and_validate(args.corpus)
    vocab = Vocab.load(args.vocab)
    model_config, params, extra = load_checkpoint(args.checkpoint)
    store = load_store(args.store)
    pooling = extra.get("pooling_mode", "query_span")
    run = run_retrieval(conversations, store, vocab, params, model_config,
                        mode=args.query_type, k=args.k, pooling=pooling)
    write_run(run, args.out)
    print(f"wrote run with {len(run)} queries (k={args.k}) -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    run = read_run(args.run)
    qrels = read_qrels(args.qrels)
    collection = None
    if args.corpus:
        collection, _ = load_and_validate(args.corpus)
    report = evaluate_run(run, qrels, collection)
    write_report(report, args.out)
    print(report.to_json())
    return 0


def cmd_ablate(args) -> int:
    passages, conversations = load_and_validate(args.corpus)
    vocab = Vocab.load(args.vocab)
    mapping = _load_config_mapping(args.config)
    model_config = model_config_from(mapping, vocab_size=len(vocab))
    train_config = train_config_from(mapping)
    if args.eval_split < 1 or args.eval_split >= len(conversations):
        raise ValueError(
            f"--eval-split must be in [1, {len(conversations) - 1}] for this corpus"
        )
    train_convs = conversations[: -args.eval_split]
    eval_convs = conversations[-args.eval_split:]
    base_seed = args.seed if args.seed is not None else train_config.seed
    seeds = (base_seed, base_seed + 1, base_seed + 2)
    axes = tuple(part.strip() for part in args.axes.split(",") if part.strip())
    rows = run_ablation_suite(passages, train_convs, eval_convs, vocab,
                              model_config, train_config, seeds=seeds, axes=axes,
                              eval_k=args.k)
    table = render_ablation_table(rows)
    print(table)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table + "\n")
    return 0


def cmd_grad_check(args) -> int:
    reports = checks.check_core_ops(seed=args.seed, tolerance=args.tolerance)
    epsilon = args.epsilon if args.epsilon else checks.LOSS_CHECK_EPSILONS
    reports += checks.check_losses(seed=args.seed, epsilon=epsilon,
                                   tolerance=args.tolerance)
    all_ok = True
    for report in reports:
        print(report)
        all_ok = all_ok and report.passed
    if not all_ok:
        print("gradient checks FAILED", file=sys.stderr)
        return 2
    return 0


def demo_repl(store, vocab, params, model_config, stdin, stdout, k: int = 5,
              passage_text: Optional[dict] = None) -> None:
    """Interactive loop: retrieval over the running dialogue history.

    Each query is encoded with all previous queries as history (responses are
    not collected), embedded from the query span, and searched. Oldest turns
    are dropped with a notice if the history overflows the context window.
    """
    history: list = []
    stdout.write("multi-turn retrieval demo; :reset clears history, :quit exits\n")
    while True:
        stdout.write("query> ")
        stdout.flush()
        line = stdin.readline()
        if not line:
            break
        text = line.strip()
        if not text:
            continue
        if text == ":quit":
            break
        if text == ":reset":
            history.clear()
            stdout.write("history cleared\n")
            continue
        turns = [(q, "") for q in history] + [(text, None)]
        dropped = 0
        while True:
            try:
                encoded = encode_conversation(turns, vocab, model_config.context_len)
                break
            except Exception:
                if len(turns) == 1:
                    stdout.write("query cannot be encoded, try another\n")
                    encoded = None
                    break
                turns = turns[1:]
                dropped += 1
        if encoded is None:
            continue
        if dropped:
            stdout.write(f"[dropped {dropped} oldest turn(s) to fit the context]\n")
        embedding = embed_queries([encoded], params, model_config)[0]
        result = search(store, embedding, k)
        for rank, (pid, score) in enumerate(result.entries, start=1):
            text_part = f"  {passage_text[pid]}" if passage_text and pid in passage_text else ""
            stdout.write(f"{rank:2d}. {pid}  {score:+.4f}{text_part}\n")
        history.append(text)


def cmd_demo(args) -> int:
    model_config, params, _extra = load_checkpoint(args.checkpoint)
    store = load_store(args.store)
    vocab = Vocab.load(args.vocab)
    passage_text = None
    if args.corpus:
        passages, _ = load_and_validate(args.corpus)
        passage_text = {p.id: p.text for p in passages}
    demo_repl(store, vocab, params, model_config, sys.stdin, sys.stdout,
              k=args.k, passage_text=passage_text)
    return 0


_COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "build-vocab": cmd_build_vocab,
    "train": cmd_train,
    "embed-passages": cmd_embed_passages,
    "search": cmd_search,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "grad-check": cmd_grad_check,
    "demo": cmd_demo,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except BrokenPipeError:
        return 0
    except Exception as exc:  # runtime failures map to exit code 2
        print(f"convsearch {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
