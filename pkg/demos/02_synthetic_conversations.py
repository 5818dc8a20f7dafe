"""Generate a small conversational search corpus and look inside it.

Topic shifts move a conversation to a new subject; pronoun queries lean on
the previous turn and come with an exact self-contained rewrite.

Run: python demos/02_synthetic_conversations.py
"""

from convsearch.corpus import GenConfig, count_topic_transitions, generate, oracle_rewrite

config = GenConfig(n_topics=4, passages_per_topic=20, n_conversations=6,
                   turns_min=4, turns_max=5, p_shift=0.35, p_anaphora=0.7,
                   seed=2024)
passages, conversations = generate(config)

print(f"{len(passages)} passages over {config.n_topics} topics\n")
for p in passages[:4]:
    print(f"  [{p.id} t{p.topic_id}] {p.text}")

conversation = conversations[0]
print(f"\nconversation {conversation.id}:")
for n, turn in enumerate(conversation.turns, start=1):
    marker = "*" if "its" in turn.query.split() else " "
    print(f"  {n}.{marker} Q: {turn.query}")
    print(f"      A: {turn.response}   (gold {turn.gold_passage_ids[0]}, topic {turn.topic_id})")
    if turn.rewrite != turn.query:
        print(f"      rewrite: {oracle_rewrite(conversation, n)}")

shifts, total = count_topic_transitions(conversations)
print(f"\ntopic shifts: {shifts}/{total} transitions "
      f"(configured probability {config.p_shift})")
