"""Ranking metrics, including the Historical Interference Rate.

HIR@k asks: does the top-k contain a passage that was gold for an EARLIER
turn but is not gold now? High interference means the retriever is stuck on
old context instead of tracking the current query.

Run: python demos/05_metrics_and_interference.py
"""

from convsearch.evaluator import evaluate_run, hir_at_k, hit_at_k, mrr, ndcg_at_k

qrels = {
    ("c0", 1): frozenset({"p-moon"}),
    ("c0", 2): frozenset({"p-tide"}),
    ("c0", 3): frozenset({"p-reef"}),
}

print("== a retriever that anchors on turn 1 ==")
anchored = {
    ("c0", 1): [("p-moon", 0.9), ("p-x", 0.5)],
    ("c0", 2): [("p-moon", 0.8), ("p-tide", 0.7)],   # old gold outranks current
    ("c0", 3): [("p-moon", 0.8), ("p-y", 0.4)],      # current gold missing
}
per_turn, mean = hir_at_k(anchored, qrels, k=2)
print("hit@2 :", hit_at_k(anchored, qrels, 2))
print("hir@2 :", mean, "per turn:", per_turn)

print("\n== a retriever that tracks the current turn ==")
tracking = {
    ("c0", 1): [("p-moon", 0.9), ("p-x", 0.5)],
    ("c0", 2): [("p-tide", 0.9), ("p-z", 0.5)],
    ("c0", 3): [("p-reef", 0.9), ("p-moon", 0.5)],   # old gold BELOW the cut
}
per_turn, mean = hir_at_k(tracking, qrels, k=1)
print("hit@1 :", hit_at_k(tracking, qrels, 1))
print("hir@1 :", mean, "per turn:", per_turn)

print("\n== the full report ==")
report = evaluate_run(tracking, qrels)
print(report.to_json())

print("\nsingle-metric spot values:")
print("  mrr of first-relevant at rank 2:",
      mrr({("c0", 1): [("p-x", 1.0), ("p-moon", 0.9)]}, qrels))
print("  ndcg@3 of gold at rank 2:",
      round(ndcg_at_k({("c0", 1): [("p-x", 1.0), ("p-moon", 0.9)]}, qrels, 3), 6))
