"""Synthetic goal-annotated dialogues from an agenda user and an FSM agent.

The system side is a deterministic finite-state agent that greets, requests
unfilled slots, confirms what it heard and closes with the slot-value set.
The user side is a small agenda-based simulator whose cooperativeness and
randomness dials change how many turns a dialogue takes.

Between the user and the agent sits an optional noisy channel that
misrecognises informed values with probability ``channel_noise``; it gives
the corpus the contradicting confirmations a simulator has to learn to
correct.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .acts import (
    MAX_ACTS,
    MAX_ARGS,
    DialogueAct,
    DialogueTurn,
    PersonalityProfile,
    Schema,
    Speaker,
    UserGoal,
    turn_from_dict,
    turn_to_dict,
)
from .numerics import substream

MAX_TURNS = 20


@dataclass
class CorpusConfig:
    n_dialogues: int = 10000
    seed: int = 0
    cooperativeness_range: tuple = (0.3, 1.0)
    randomness_range: tuple = (0.0, 0.3)
    dontcare_probability: float = 0.3
    channel_noise: float = 0.05
    confirm_strategy: str = "mixed"
    request_batch: int = 2
    shuffle_agenda: bool = False

    def __post_init__(self):
        if self.n_dialogues < 1:
            raise ValueError("n_dialogues must be at least 1")
        if not 0.0 <= self.dontcare_probability <= 1.0:
            raise ValueError("dontcare_probability must be in [0, 1]")
        if self.confirm_strategy not in ("eager", "batch", "mixed"):
            raise ValueError(f"unknown confirm strategy {self.confirm_strategy!r}")
        for lo, hi in (self.cooperativeness_range, self.randomness_range):
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError("personality ranges must be sub-intervals of [0, 1]")


@dataclass
class Dialogue:
    goal: UserGoal
    turns: list
    outcome: str

    def __post_init__(self):
        if len(self.turns) > MAX_TURNS:
            raise ValueError(f"dialogue has {len(self.turns)} turns (max {MAX_TURNS})")
        for i, t in enumerate(self.turns):
            want = Speaker.SYSTEM if i % 2 == 0 else Speaker.USER
            if t.speaker is not want:
                raise ValueError(f"turn {i} is {t.speaker.value}, expected {want.value}")
        if self.outcome not in ("success", "failure", "timeout"):
            raise ValueError(f"bad outcome {self.outcome!r}")

    @property
    def system_turns(self):
        return self.turns[0::2]

    @property
    def user_turns(self):
        return self.turns[1::2]

    def to_dict(self):
        p = self.goal.personality
        return {
            "goal": self.goal.to_dict(),
            "personality": {"cooperativeness": p.cooperativeness, "randomness": p.randomness},
            "turns": [turn_to_dict(t) for t in self.turns],
            "outcome": self.outcome,
        }

    @classmethod
    def from_dict(cls, d):
        goal = UserGoal(d["goal"], PersonalityProfile(**d["personality"]))
        return cls(goal, [turn_from_dict(t) for t in d["turns"]], d["outcome"])


# --------------------------------------------------------------------------
# goals


def sample_goal(schema: Schema, config: CorpusConfig, rng) -> UserGoal:
    constraints = {}
    for slot in schema.slots:
        if rng.random() < config.dontcare_probability:
            constraints[slot.name] = None
        else:
            constraints[slot.name] = slot.values[rng.integers(len(slot.values))]
    lo, hi = config.cooperativeness_range
    coop = float(rng.uniform(lo, hi))
    lo, hi = config.randomness_range
    rand = float(rng.uniform(lo, hi))
    return UserGoal(constraints, PersonalityProfile(coop, rand))


# --------------------------------------------------------------------------
# agenda-based user


@dataclass(frozen=True)
class AgendaState:
    """Pending informs (top of the stack first) and correctly confirmed slots."""

    pending: tuple
    satisfied: frozenset = frozenset()

    @classmethod
    def initial(cls, goal: UserGoal, rng=None, shuffle=False):
        fixed = [s for s in goal.constraints if goal.constraints[s] is not None]
        if shuffle:
            fixed = [fixed[i] for i in rng.permutation(len(fixed))]
        return cls(tuple(fixed))


def _user_value(slot, goal, schema, rng):
    v = goal.value(slot)
    if v is None:
        domain = schema.slot(slot).values
        v = domain[rng.integers(len(domain))]
    return v


def _inform_acts(informs):
    return [DialogueAct("inform", tuple(informs[i : i + MAX_ARGS])) for i in range(0, len(informs), MAX_ARGS)]


def agenda_respond(state: AgendaState, goal: UserGoal, system_turn: DialogueTurn, rng,
                   schema: Optional[Schema] = None):
    """User reply to one system turn; returns ``(turn, new_state)``.

    Flexible slots are only answered when asked, with a random domain value,
    so ``schema`` is needed whenever the goal has flexible slots.
    """
    coop = goal.personality.cooperativeness
    pending = list(state.pending)
    satisfied = set(state.satisfied)
    informs = []
    greet = affirm = negate = False
    asked_something = False

    def take(slot):
        if slot in pending:
            pending.remove(slot)
        if all(s != slot for s, _ in informs):
            informs.append((slot, _user_value(slot, goal, schema, rng)))

    for act in system_turn.acts:
        if act.name == "greeting":
            greet = True
            asked_something = True
            n = 2 if rng.random() < coop else 1
            for slot in pending[:n]:
                take(slot)
        elif act.name == "confirm":
            asked_something = True
            wrong = False
            for slot, value in act.args:
                if value is None:
                    continue
                if goal.is_flexible(slot) or goal.value(slot) == value or slot not in goal:
                    satisfied.add(slot)
                else:
                    wrong = True
                    satisfied.discard(slot)
                    take(slot)
            negate = negate or wrong
            affirm = affirm or not wrong
        elif act.name == "request":
            asked_something = True
            slots = [s for s, _ in act.args]
            if len(slots) >= 2 and rng.random() >= coop:
                slots = slots[:1]
            for slot in slots:
                take(slot)

    if rng.random() < goal.personality.randomness:
        if pending and rng.random() < 0.5:
            take(pending[0])
        else:
            informs.reverse()

    acts = []
    if greet:
        acts.append(DialogueAct("greeting"))
    if negate:
        acts.append(DialogueAct("negate"))
    elif affirm:
        acts.append(DialogueAct("affirm"))
    room = MAX_ACTS - len(acts)
    inform_acts = _inform_acts(informs)
    while len(inform_acts) > room:
        # give the overflow back to the agenda
        dropped = inform_acts.pop()
        pending[:0] = [s for s, _ in dropped.args if goal.value(s) is not None]
    acts += inform_acts
    fixed = {s for s in goal.constraints if goal.constraints[s] is not None}
    if not informs and not negate and fixed <= satisfied and len(acts) < MAX_ACTS:
        acts.append(DialogueAct("bye"))
    if not acts:
        acts.append(DialogueAct("affirm" if asked_something else "bye"))
    turn = DialogueTurn(Speaker.USER, tuple(acts))
    return turn, AgendaState(tuple(pending), frozenset(satisfied))


# --------------------------------------------------------------------------
# finite-state system agent


@dataclass(frozen=True)
class FsmState:
    slots: tuple
    confirm_strategy: str = "eager"
    request_batch: int = 2
    started: bool = False
    closed: bool = False
    filled: tuple = ()
    confirmed: frozenset = frozenset()
    awaiting: tuple = ()

    @property
    def filled_map(self):
        return dict(self.filled)


def fsm_initial(schema: Schema, confirm_strategy="eager", request_batch=2) -> FsmState:
    return FsmState(schema.slot_names, confirm_strategy, request_batch)


def _chunk_acts(name, args):
    return [DialogueAct(name, tuple(args[i : i + MAX_ARGS])) for i in range(0, len(args), MAX_ARGS)]


def fsm_respond(fsm: FsmState, user_turn: Optional[DialogueTurn]):
    """Deterministic agent move; returns ``(system_turn, new_state)``."""
    if not fsm.started:
        return DialogueTurn(Speaker.SYSTEM, (DialogueAct("greeting"),)), replace(fsm, started=True)
    filled = fsm.filled_map
    confirmed = set(fsm.confirmed)
    awaiting = list(fsm.awaiting)
    newly = []
    affirmed = negated = False
    if user_turn is not None:
        for act in user_turn.acts:
            if act.name == "inform":
                for slot, value in act.args:
                    if value is None or slot not in fsm.slots:
                        continue
                    if filled.get(slot) != value:
                        filled[slot] = value
                        confirmed.discard(slot)
                    if slot not in newly:
                        newly.append(slot)
            elif act.name == "affirm":
                affirmed = True
            elif act.name == "negate":
                negated = True
    corrected = any(s in newly for s in awaiting)
    for slot in awaiting:
        if slot in newly:
            continue
        if negated and not corrected:
            filled.pop(slot, None)
            confirmed.discard(slot)
        elif affirmed or negated:
            confirmed.add(slot)

    unfilled = [s for s in fsm.slots if s not in filled]
    unconfirmed = [s for s in newly if s in filled and s not in confirmed]
    unconfirmed += [s for s in fsm.slots if s in filled and s not in confirmed and s not in unconfirmed]
    if fsm.confirm_strategy == "batch" and unfilled:
        unconfirmed = []
    to_confirm = unconfirmed[:MAX_ARGS]
    to_request = unfilled[: fsm.request_batch]
    order = tuple(sorted(filled.items(), key=lambda kv: fsm.slots.index(kv[0])))
    if not to_confirm and not to_request:
        acts = _chunk_acts("close", [(s, v) for s, v in order])
        new = replace(fsm, filled=order, confirmed=frozenset(confirmed), awaiting=(), closed=True)
        return DialogueTurn(Speaker.SYSTEM, tuple(acts[:MAX_ACTS])), new
    acts = []
    if to_confirm:
        acts.append(DialogueAct("confirm", tuple((s, filled[s]) for s in to_confirm)))
    if to_request:
        acts.append(DialogueAct("request", tuple((s, None) for s in to_request)))
    new = replace(fsm, filled=order, confirmed=frozenset(confirmed), awaiting=tuple(to_confirm))
    return DialogueTurn(Speaker.SYSTEM, tuple(acts)), new


# --------------------------------------------------------------------------
# corpus


def _noisy(turn: DialogueTurn, schema: Schema, p, rng):
    """The agent's view of a user turn: informed values misheard with probability p."""
    if p <= 0:
        return turn
    acts = []
    for act in turn.acts:
        if act.name != "inform":
            acts.append(act)
            continue
        args = []
        for slot, value in act.args:
            if value is not None and rng.random() < p:
                others = [v for v in schema.slot(slot).values if v != value]
                if others:
                    value = others[rng.integers(len(others))]
            args.append((slot, value))
        acts.append(DialogueAct(act.name, tuple(args)))
    return DialogueTurn(turn.speaker, tuple(acts))


def simulate_dialogue(goal: UserGoal, schema: Schema, rng, confirm_strategy="eager",
                      request_batch=2, channel_noise=0.0, shuffle_agenda=False) -> Dialogue:
    fsm = fsm_initial(schema, confirm_strategy, request_batch)
    agenda = AgendaState.initial(goal, rng, shuffle=shuffle_agenda)
    turns = []
    user_turn = None
    while True:
        heard = None if user_turn is None else _noisy(user_turn, schema, channel_noise, rng)
        sys_turn, fsm = fsm_respond(fsm, heard)
        turns.append(sys_turn)
        if fsm.closed:
            fixed_ok = all(fsm.filled_map.get(s) == v for s, v in goal.fixed().items())
            return Dialogue(goal, turns, "success" if fixed_ok else "failure")
        if len(turns) >= MAX_TURNS:
            return Dialogue(goal, turns, "timeout")
        user_turn, agenda = agenda_respond(agenda, goal, sys_turn, rng, schema)
        turns.append(user_turn)
        if len(turns) >= MAX_TURNS:
            return Dialogue(goal, turns, "timeout")


def generate_dialogue(index: int, schema: Schema, config: CorpusConfig) -> Dialogue:
    rng = substream(config.seed, "corpus", index)
    goal = sample_goal(schema, config, rng)
    strategy = config.confirm_strategy
    if strategy == "mixed":
        strategy = "eager" if rng.random() < 0.5 else "batch"
    return simulate_dialogue(goal, schema, rng, strategy, config.request_batch,
                             config.channel_noise, config.shuffle_agenda)


def generate_corpus(config: CorpusConfig, schema: Schema, path=None) -> list:
    """Generate ``config.n_dialogues`` dialogues; optionally write them as JSON Lines.

    Each dialogue draws from its own stream keyed by ``(seed, index)``.
    """
    dialogues = [generate_dialogue(i, schema, config) for i in range(config.n_dialogues)]
    if path is not None:
        write_corpus(path, dialogues)
    return dialogues


def write_corpus(path, dialogues):
    with open(path, "w") as f:
        for d in dialogues:
            f.write(json.dumps(d.to_dict(), sort_keys=True) + "\n")


def read_corpus(path) -> list:
    with open(path) as f:
        return [Dialogue.from_dict(json.loads(line)) for line in f if line.strip()]


def split_corpus(dialogues, seed, val_fraction=0.1):
    """Seed-stable train/validation split by dialogue."""
    n = len(dialogues)
    order = substream(seed, "split").permutation(n)
    n_val = max(1, int(round(n * val_fraction))) if n > 1 else 0
    val_idx = set(order[:n_val].tolist())
    train = [d for i, d in enumerate(dialogues) if i not in val_idx]
    val = [d for i, d in enumerate(dialogues) if i in val_idx]
    return train, val
