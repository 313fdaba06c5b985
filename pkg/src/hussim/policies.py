"""Rule-based system policies used as interlocutors for simulator evaluation.

A policy greets, elicits every schema slot, confirms what it believes and
closes with the believed slot-value set. ``confusion_rate`` corrupts each
informed value it ingests; ``max_reask`` bounds how often one slot may be
re-requested or re-confirmed before the policy accepts what it has (or gives
up on the slot), which guarantees progress.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .acts import MAX_ACTS, MAX_ARGS, DialogueAct, DialogueTurn, Schema, Speaker


@dataclass(frozen=True)
class PolicyConfig:
    confusion_rate: float = 0.0
    confirm_strategy: str = "eager"
    max_reask: int = 3
    request_batch: int = 2

    def __post_init__(self):
        if not 0.0 <= self.confusion_rate <= 1.0:
            raise ValueError("confusion_rate must be in [0, 1]")
        if self.confirm_strategy not in ("eager", "batch"):
            raise ValueError(f"unknown confirm strategy {self.confirm_strategy!r}")
        if self.max_reask < 1:
            raise ValueError("max_reask must be at least 1")
        if self.request_batch < 1:
            raise ValueError("request_batch must be at least 1")


PRESETS = {
    # stands in for a stronger, RL-style policy
    "robust": PolicyConfig(confusion_rate=0.02, confirm_strategy="batch", max_reask=3),
    # stands in for a weaker, SL-style policy
    "brittle": PolicyConfig(confusion_rate=0.15, confirm_strategy="eager", max_reask=2),
}


def policy_config(preset: Optional[str] = None, **overrides) -> PolicyConfig:
    base = PRESETS[preset] if preset else PolicyConfig()
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(base, **overrides)


@dataclass
class PolicyState:
    slots: tuple
    believed: dict = field(default_factory=dict)
    confirmed: set = field(default_factory=set)
    abandoned: set = field(default_factory=set)
    reask: dict = field(default_factory=dict)
    phase: str = "greet"
    requested: tuple = ()
    awaiting: tuple = ()

    def __post_init__(self):
        if not self.confirmed <= set(self.believed):
            raise ValueError("confirmed slots must be believed")

    @classmethod
    def initial(cls, schema: Schema):
        return cls(schema.slot_names)


def _misheard(slot, value, schema, config, rng):
    if config.confusion_rate > 0 and rng.random() < config.confusion_rate:
        others = [v for v in schema.slot(slot).values if v != value]
        if others:
            return others[rng.integers(len(others))]
    return value


def _chunk(name, args):
    return [DialogueAct(name, tuple(args[i : i + MAX_ARGS])) for i in range(0, len(args), MAX_ARGS)]


def policy_respond(state: PolicyState, config: PolicyConfig, user_turn: Optional[DialogueTurn],
                   rng, schema: Schema):
    """One system move. Mutates and returns ``state`` alongside the turn."""
    if state.phase == "closed":
        raise RuntimeError("policy already closed the dialogue")
    if state.phase == "greet":
        state.phase = "elicit"
        return DialogueTurn(Speaker.SYSTEM, (DialogueAct("greeting"),)), state

    newly = []
    affirmed = negated = False
    if user_turn is not None:
        for act in user_turn.acts:
            if act.name == "inform":
                for slot, value in act.args:
                    if value is None or slot not in state.slots:
                        continue
                    heard = _misheard(slot, value, schema, config, rng)
                    if state.believed.get(slot) != heard:
                        state.believed[slot] = heard
                        if slot in state.confirmed:
                            state.confirmed.discard(slot)
                            state.reask[slot] = state.reask.get(slot, 0) + 1
                    state.abandoned.discard(slot)
                    if slot not in newly:
                        newly.append(slot)
            elif act.name == "affirm":
                affirmed = True
            elif act.name == "negate":
                negated = True

    corrected = any(s in newly for s in state.awaiting)
    for slot in state.awaiting:
        if slot in newly:
            state.reask[slot] = state.reask.get(slot, 0) + 1
        elif negated and not corrected:
            state.believed.pop(slot, None)
            state.reask[slot] = state.reask.get(slot, 0) + 1
        elif affirmed or negated:
            state.confirmed.add(slot)
        else:
            state.reask[slot] = state.reask.get(slot, 0) + 1
    for slot in state.requested:
        if slot not in state.believed:
            state.reask[slot] = state.reask.get(slot, 0) + 1

    # budget exhausted: accept the belief or give the slot up
    for slot in state.slots:
        if state.reask.get(slot, 0) >= config.max_reask and slot not in state.confirmed:
            if slot in state.believed:
                state.confirmed.add(slot)
            else:
                state.abandoned.add(slot)

    unfilled = [s for s in state.slots if s not in state.believed and s not in state.abandoned]
    pending = [s for s in newly if s in state.believed and s not in state.confirmed]
    pending += [s for s in state.slots if s in state.believed and s not in state.confirmed and s not in pending]
    if config.confirm_strategy == "batch" and unfilled:
        pending = []
    to_confirm = pending[:MAX_ARGS]
    to_request = unfilled[: config.request_batch]

    if not to_confirm and not to_request:
        state.phase = "closed"
        state.requested = state.awaiting = ()
        final = [(s, state.believed[s]) for s in state.slots if s in state.confirmed]
        acts = _chunk("close", final) or [DialogueAct("close")]
        return DialogueTurn(Speaker.SYSTEM, tuple(acts[:MAX_ACTS])), state

    acts = []
    if to_confirm:
        acts.append(DialogueAct("confirm", tuple((s, state.believed[s]) for s in to_confirm)))
    if to_request:
        acts.append(DialogueAct("request", tuple((s, None) for s in to_request)))
    state.phase = "confirm" if to_confirm else "elicit"
    state.awaiting = tuple(to_confirm)
    state.requested = tuple(to_request)
    return DialogueTurn(Speaker.SYSTEM, tuple(acts[:MAX_ACTS])), state


def close_values(turn: DialogueTurn) -> Optional[dict]:
    """Slot-values carried by a closing turn, or ``None`` if it does not close."""
    if not any(a.name == "close" for a in turn.acts):
        return None
    out = {}
    for a in turn.acts:
        if a.name == "close":
            out.update({s: v for s, v in a.args if v is not None})
    return out
