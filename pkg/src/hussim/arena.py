"""Simulator-versus-policy rollouts and the evaluation metrics.

Metrics per report: exact goal match (EM), partial goal match (PM), average
dialogue length in turns (system and user), and the conditional entropy in
bits of the user's act-name label given the preceding system label, with
perplexity ``2 ** entropy``.
"""
from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

from .acts import (
    CoarseTurn,
    DialogueTurn,
    Schema,
    UserGoal,
    coarsen,
    decoarsen,
    parse_recover,
    turn_from_dict,
    turn_to_dict,
)
from .corpusgen import MAX_TURNS, AgendaState, CorpusConfig, agenda_respond, sample_goal
from .numerics import substream
from .policies import PolicyConfig, PolicyState, close_values, policy_respond


@dataclass
class Transcript:
    goal: UserGoal
    turns: list
    coarse_user_turns: list
    termination: str
    confirmed: Optional[dict]
    malformed_turn_count: int = 0
    # what the policy had confirmed when the turn cap cut the dialogue off
    confirmed_before_cap: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.turns) > MAX_TURNS:
            raise ValueError("transcript exceeds the turn cap")
        if self.termination not in ("closed", "turn_cap"):
            raise ValueError(f"bad termination {self.termination!r}")
        if (self.confirmed is not None) != (self.termination == "closed"):
            raise ValueError("confirmed is present exactly when the dialogue closed")
        if self.termination == "closed" and self.confirmed_before_cap:
            raise ValueError("a closed dialogue carries no pre-cap confirmations")
        if any(a.speaker == b.speaker for a, b in zip(self.turns, self.turns[1:])):
            raise ValueError("turns must alternate speakers")

    def to_dict(self):
        p = self.goal.personality
        return {
            "goal": self.goal.to_dict(),
            "personality": {"cooperativeness": p.cooperativeness, "randomness": p.randomness},
            "turns": [turn_to_dict(t) for t in self.turns],
            "coarse_user_turns": [str(t) for t in self.coarse_user_turns],
            "termination": self.termination,
            "confirmed": self.confirmed,
            "malformed_turn_count": self.malformed_turn_count,
            "confirmed_before_cap": self.confirmed_before_cap,
        }

    @classmethod
    def from_dict(cls, d):
        from .acts import PersonalityProfile

        return cls(
            goal=UserGoal(d["goal"], PersonalityProfile(**d["personality"])),
            turns=[turn_from_dict(t) for t in d["turns"]],
            coarse_user_turns=list(d.get("coarse_user_turns", [])),
            termination=d["termination"],
            confirmed=d["confirmed"],
            malformed_turn_count=d.get("malformed_turn_count", 0),
            confirmed_before_cap=d.get("confirmed_before_cap", {}),
        )


# --------------------------------------------------------------------------
# user adapters


class ScriptedUser:
    """Agenda-based user for closed-loop checks.

    It reads the concrete system turn instead of the coarse one, so its
    replies need no decoarsening.
    """

    concrete = True

    def __init__(self, goal, schema, rng):
        self.goal = goal
        self.schema = schema
        self.rng = rng
        self.state = AgendaState.initial(goal)

    def respond_concrete(self, system_turn: DialogueTurn) -> DialogueTurn:
        turn, self.state = agenda_respond(self.state, self.goal, system_turn, self.rng, self.schema)
        return turn


class ConstantUser:
    """Always emits the same coarse token sequence (used for turn-cap checks)."""

    concrete = False

    def __init__(self, tokens):
        self.tokens = list(tokens)

    def respond(self, system_turn: CoarseTurn):
        return list(self.tokens)


# --------------------------------------------------------------------------
# rollouts


def run_dialogue(session_factory: Callable, policy: PolicyConfig, goal: UserGoal, seed: int,
                 schema: Schema, vocab=None) -> Transcript:
    """Play one dialogue between a simulated user and a policy.

    ``session_factory(goal, rng)`` returns either a neural session (with
    ``respond(coarse_turn) -> tokens``) or a concrete user (``concrete=True``,
    with ``respond_concrete(turn) -> turn``).
    """
    user = session_factory(goal, substream(seed, "simulator"))
    policy_rng = substream(seed, "policy")
    value_rng = substream(seed, "values")
    state = PolicyState.initial(schema)
    turns, coarse_users = [], []
    malformed = 0
    user_turn = None
    while True:
        sys_turn, state = policy_respond(state, policy, user_turn, policy_rng, schema)
        turns.append(sys_turn)
        confirmed = close_values(sys_turn)
        if confirmed is not None:
            return Transcript(goal, turns, coarse_users, "closed", confirmed, malformed)
        if len(turns) >= MAX_TURNS:
            break
        if getattr(user, "concrete", False):
            user_turn = user.respond_concrete(sys_turn)
            coarse_users.append(coarsen(user_turn, goal))
        else:
            tokens = user.respond(coarsen(sys_turn, goal))
            ct = parse_recover(tokens, vocab)
            coarse_users.append(ct)
            user_turn = decoarsen(ct, goal, turns, schema, value_rng, on_error="drop")
        malformed += int(user_turn.malformed)
        turns.append(user_turn)
        if len(turns) >= MAX_TURNS:
            break
    before_cap = {s: state.believed[s] for s in schema.slot_names if s in state.confirmed}
    return Transcript(goal, turns, coarse_users, "turn_cap", None, malformed, before_cap)


# --------------------------------------------------------------------------
# metrics


def _slot_correct(slot, goal: UserGoal, confirmed: dict) -> bool:
    if slot not in confirmed:
        return False
    if goal.is_flexible(slot):
        return True
    return confirmed[slot] == goal.value(slot)


def exact_match(t: Transcript, schema: Optional[Schema] = None) -> int:
    if t.termination != "closed" or t.confirmed is None:
        return 0
    slots = schema.slot_names if schema is not None else tuple(t.goal.constraints)
    if schema is not None and any(s not in schema for s in t.confirmed):
        return 0
    return int(all(_slot_correct(s, t.goal, t.confirmed) for s in slots if s in t.goal))


def partial_match(t: Transcript, schema: Schema) -> float:
    """Correct slots over the schema's slot count.

    A transcript that hit the turn cap has no closing act; it is scored on
    whatever the policy had confirmed before the cap.
    """
    confirmed = t.confirmed if t.confirmed is not None else t.confirmed_before_cap
    n = sum(_slot_correct(s, t.goal, confirmed) for s in schema.slot_names if s in t.goal)
    return n / len(schema.slot_names)


def avg_dialogue_length(transcripts) -> float:
    transcripts = list(transcripts)
    if not transcripts:
        raise ValueError("no transcripts")
    return sum(len(t.turns) for t in transcripts) / len(transcripts)


def label(turn) -> tuple:
    return tuple(a.name for a in turn.acts)


def conditional_entropy(pairs) -> float:
    """H(U | S) in bits from observed ``(system_label, user_label)`` pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no label pairs")
    by_sys = defaultdict(Counter)
    for s, u in pairs:
        by_sys[s][u] += 1
    total = len(pairs)
    h = 0.0
    for counts in by_sys.values():
        n = sum(counts.values())
        h_s = -sum((c / n) * math.log2(c / n) for c in counts.values())
        h += (n / total) * h_s
    return max(h, 0.0)


def perplexity(entropy_bits) -> float:
    return 2.0 ** entropy_bits


def act_diversity(transcripts):
    """Entropy (bits) and perplexity of user act labels given the preceding system label."""
    pairs = []
    for t in transcripts:
        for i in range(1, len(t.turns), 2):
            pairs.append((label(t.turns[i - 1]), label(t.turns[i])))
    h = conditional_entropy(pairs)
    return h, perplexity(h)


@dataclass
class MetricsReport:
    em_rate: float
    pm_rate: float
    avg_length: float
    act_entropy_bits: float
    act_perplexity: float
    n_dialogues: int
    malformed_turns: int = 0
    label: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.em_rate > self.pm_rate + 1e-12:
            raise ValueError("EM cannot exceed PM")

    def to_dict(self):
        return asdict(self)


def summarize(transcripts, schema: Schema, label=None) -> MetricsReport:
    transcripts = list(transcripts)
    if not transcripts:
        raise ValueError("no transcripts")
    n = len(transcripts)
    h, ppl = act_diversity(transcripts)
    return MetricsReport(
        em_rate=sum(exact_match(t, schema) for t in transcripts) / n,
        pm_rate=sum(partial_match(t, schema) for t in transcripts) / n,
        avg_length=avg_dialogue_length(transcripts),
        act_entropy_bits=h,
        act_perplexity=ppl,
        n_dialogues=n,
        malformed_turns=sum(t.malformed_turn_count for t in transcripts),
        label=dict(label or {}),
    )


def evaluation_goals(schema: Schema, n_goals: int, seed: int, config: Optional[CorpusConfig] = None):
    config = config or CorpusConfig(n_dialogues=1, seed=seed)
    rng = substream(seed, "goals")
    return [sample_goal(schema, config, rng) for _ in range(n_goals)]


def neural_factory(simulator):
    def factory(goal, rng):
        return simulator.session(goal, rng)

    return factory


def scripted_factory(schema):
    def factory(goal, rng):
        return ScriptedUser(goal, schema, rng)

    return factory


def run_matchup(session_factory, policy: PolicyConfig, goals, seed, schema, vocab=None):
    return [
        run_dialogue(session_factory, policy, goal, seed * 100003 + i, schema, vocab)
        for i, goal in enumerate(goals)
    ]


def evaluate(simulator, policy: PolicyConfig, n_goals: int, seed: int, label=None,
             transcripts_out=None) -> MetricsReport:
    """Run ``n_goals`` fresh goals against ``policy`` and aggregate the metrics."""
    if n_goals < 1:
        raise ValueError("n_goals must be at least 1")
    schema = simulator.schema
    goals = evaluation_goals(schema, n_goals, seed)
    transcripts = run_matchup(neural_factory(simulator), policy, goals, seed, schema, simulator.vocab)
    if transcripts_out is not None:
        write_transcripts(transcripts_out, transcripts)
    return summarize(transcripts, schema, label)


def write_transcripts(path, transcripts):
    with open(path, "w") as f:
        for t in transcripts:
            f.write(json.dumps(t.to_dict(), sort_keys=True) + "\n")


def read_transcripts(path):
    with open(path) as f:
        return [Transcript.from_dict(json.loads(line)) for line in f if line.strip()]


# --------------------------------------------------------------------------
# report formatting

TABLE_COLUMNS = (
    ("Exact Match (%)", lambda r: f"{100 * r.em_rate:.2f}"),
    ("Partial Match (%)", lambda r: f"{100 * r.pm_rate:.2f}"),
    ("Dialogue Length", lambda r: f"{r.avg_length:.3f}"),
    ("Entropy", lambda r: f"{r.act_entropy_bits:.3f}"),
    ("Perplexity", lambda r: f"{r.act_perplexity:.3f}"),
)


def format_table(rows):
    """Aligned plain-text grid; ``rows`` is a list of ``(simulator, policy, report)``."""
    header = ["Simulator", "Policy"] + [c for c, _ in TABLE_COLUMNS]
    body = [[sim, pol] + [f(r) for _, f in TABLE_COLUMNS] for sim, pol, r in rows]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in body:
        lines.append("  ".join(str(x).ljust(w) for x, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def reports_to_json(rows):
    return json.dumps(
        [{"simulator": s, "policy": p, **r.to_dict()} for s, p, r in rows], indent=2, sort_keys=True
    ) + "\n"
