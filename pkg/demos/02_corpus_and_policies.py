"""Generate a small agenda-vs-FSM corpus and play the scripted user against both policy presets.

The scripted user always knows its goal, so any failure here comes from the
policy's own confusion rate and re-ask budget.

    python demos/02_corpus_and_policies.py
"""
from collections import Counter

import numpy as np

from hussim.acts import movie_schema
from hussim.arena import evaluation_goals, run_matchup, scripted_factory, summarize
from hussim.corpusgen import CorpusConfig, generate_corpus
from hussim.policies import PRESETS

schema = movie_schema()
corpus = generate_corpus(CorpusConfig(n_dialogues=500, seed=7), schema)
lengths = np.array([len(d.turns) for d in corpus])
print(f"500 dialogues, mean length {lengths.mean():.2f} turns (min {lengths.min()}, max {lengths.max()})")
print("outcomes:", dict(Counter(d.outcome for d in corpus)))

print("\nfirst dialogue:")
print("  goal:", corpus[0].goal.to_dict())
for turn in corpus[0].turns:
    print("  ", turn)

goals = evaluation_goals(schema, 300, seed=7)
print("\nscripted user vs policy presets, 300 goals")
print(f"{'preset':8} {'EM':>6} {'PM':>6} {'length':>7} {'entropy':>8}")
for name, policy in PRESETS.items():
    r = summarize(run_matchup(scripted_factory(schema), policy, goals, 7, schema), schema)
    print(f"{name:8} {r.em_rate:6.3f} {r.pm_rate:6.3f} {r.avg_length:7.2f} {r.act_entropy_bits:8.3f}")
