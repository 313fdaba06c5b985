"""Train a small HUSReg simulator in under a minute and let it talk to both policies.

The model is far smaller than the defaults (embedding 48, state 64) so the
demo stays quick; `hussim matrix --seed 7` trains the full-size models.
A model this small writes well-formed turns but often affirms a wrong
confirmation from the policy, so expect PM well above EM.

    python demos/03_train_and_play.py
"""
import logging

from hussim.acts import movie_schema
from hussim.arena import evaluation_goals, neural_factory, run_dialogue, run_matchup, summarize
from hussim.corpusgen import CorpusConfig, generate_corpus
from hussim.policies import PRESETS
from hussim.simulators import TrainConfig, train

logging.basicConfig(level=logging.INFO, format="%(message)s")

schema = movie_schema()
corpus = generate_corpus(CorpusConfig(n_dialogues=1500, seed=3), schema)
config = TrainConfig(embedding_dim=48, state_dim=64, epochs=15, seed=3)
result = train(corpus, "husreg", config, schema)
sim = result.simulator
print(f"best epoch {result.best_epoch}, val token acc {result.curves[result.best_epoch - 1]['val_token_acc']:.3f}")

goal = evaluation_goals(schema, 1, seed=5)[0]
t = run_dialogue(neural_factory(sim), PRESETS["robust"], goal, seed=5, schema=schema, vocab=sim.vocab)
print("\ngoal:", goal.to_dict())
for i, turn in enumerate(t.turns):
    print(f"  {i:2d} {turn}")
print(f"  -> {t.termination}, confirmed {t.confirmed}")

goals = evaluation_goals(schema, 200, seed=5)
for name in ("robust", "brittle"):
    r = summarize(run_matchup(neural_factory(sim), PRESETS[name], goals, 5, schema, sim.vocab), schema)
    print(f"{name:8} EM {r.em_rate:.3f}  PM {r.pm_rate:.3f}  length {r.avg_length:.2f}  "
          f"entropy {r.act_entropy_bits:.3f}  malformed turns {r.malformed_turns}")
