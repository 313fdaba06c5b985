"""Walk through the dialogue-act layer on the Friday / Sully booking goal.

A concrete system turn is coarsened against the user's goal, flattened into
the token sequence the networks read, parsed back, and finally turned into a
concrete user reply again with decoarsen.

    python demos/01_dialogue_acts.py
"""
import numpy as np

from hussim.acts import (
    CoarseTurn,
    DialogueAct,
    DialogueTurn,
    PersonalityProfile,
    Speaker,
    Tag,
    UserGoal,
    coarsen,
    decoarsen,
    goal_tokens,
    linearize,
    movie_schema,
    parse,
    schema_vocabulary,
)

schema = movie_schema()
vocab = schema_vocabulary(schema)
print(f"vocabulary: {len(vocab)} tokens, first ten {list(vocab.tokens[:10])}")

# theatre and time are left open (None = Flexible)
goal = UserGoal(
    {"date": "Friday", "num_tickets": "2", "theatre_name": None, "movie": "Sully", "time": None},
    PersonalityProfile(cooperativeness=1.0, randomness=0.0),
)
print("goal tokens:", " ".join(goal_tokens(goal)))

system = DialogueTurn(Speaker.SYSTEM, (
    DialogueAct("confirm", (("movie", "Sully"),)),
    DialogueAct("request", (("num_tickets", None),)),
))
coarse = coarsen(system, goal)
tokens = linearize(coarse, vocab)
print("system turn:  ", system)
print("coarse tokens:", " ".join(tokens))
assert parse(tokens, vocab) == coarse

# a wrong confirmation is tagged against the goal, not by its surface value
wrong = DialogueTurn(Speaker.SYSTEM, (DialogueAct("confirm", (("movie", "Moana"), ("time", "9pm"))),))
print("wrong confirm:", " ".join(linearize(coarsen(wrong, goal))))

# what a simulator might say back, made concrete again
reply = CoarseTurn((
    DialogueAct("affirm"),
    DialogueAct("inform", (("num_tickets", Tag.VALUE_IN_GOAL), ("time", Tag.DONT_CARE))),
))
rng = np.random.default_rng(0)
for _ in range(3):
    print("decoarsened:  ", decoarsen(reply, goal, [system], schema, rng))
