"""Dialogue-act domain model, coarse value tags and the token grammar.

A concrete turn such as ``confirm(movie="Sully") request(num_tickets)`` is
coarsened against the user goal into ``confirm(movie=ValueInGoal)
request(num_tickets)`` and then linearized into the token sequence::

    confirm ( movie=ValueInGoal ) request ( num_tickets )

``parse`` inverts ``linearize`` and ``decoarsen`` turns coarse tags back into
concrete values at simulation time.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Iterable, Mapping, Optional, Sequence

MAX_ACTS = 3
MAX_ARGS = 5


class Speaker(str, Enum):
    SYSTEM = "SYSTEM"
    USER = "USER"


class Tag(str, Enum):
    REQUESTED = "Requested"
    DONT_CARE = "DontCare"
    VALUE_IN_GOAL = "ValueInGoal"
    VALUE_CONTRADICTS_GOAL = "ValueContradictsGoal"
    OTHER = "Other"


TAG_ORDER = tuple(Tag)


class CardinalityError(ValueError):
    pass


class CoarsenError(ValueError):
    pass


class DecoarsenError(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, position: int, message: str):
        super().__init__(f"position {position}: {message}")
        self.position = position
        self.message = message


# --------------------------------------------------------------------------
# schema and goals


@dataclass(frozen=True)
class Slot:
    name: str
    values: tuple

    def __post_init__(self):
        if not self.name:
            raise ValueError("slot name must be nonempty")
        if not self.values:
            raise ValueError(f"slot {self.name!r} has an empty value domain")
        object.__setattr__(self, "values", tuple(self.values))


@dataclass(frozen=True)
class Schema:
    slots: tuple
    acts: tuple

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(self.slots))
        object.__setattr__(self, "acts", tuple(self.acts))
        names = [s.name for s in self.slots]
        if not names:
            raise ValueError("schema needs at least one slot")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate slot names in {names}")
        if len(set(self.acts)) != len(self.acts):
            raise ValueError(f"duplicate act names in {list(self.acts)}")

    @property
    def slot_names(self) -> tuple:
        return tuple(s.name for s in self.slots)

    def slot(self, name: str) -> Slot:
        for s in self.slots:
            if s.name == name:
                return s
        raise KeyError(name)

    def __contains__(self, name) -> bool:
        return any(s.name == name for s in self.slots)

    def to_dict(self) -> dict:
        return {
            "slots": [{"name": s.name, "values": list(s.values)} for s in self.slots],
            "acts": list(self.acts),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schema":
        return cls(
            slots=tuple(Slot(s["name"], tuple(s["values"])) for s in d["slots"]),
            acts=tuple(d["acts"]),
        )

    @classmethod
    def load(cls, path) -> "Schema":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def dump(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)


def movie_schema() -> Schema:
    """The bundled movie-ticket booking schema."""
    text = resources.files("hussim").joinpath("data/movie_schema.json").read_text()
    return Schema.from_dict(json.loads(text))


@dataclass(frozen=True)
class PersonalityProfile:
    cooperativeness: float = 1.0
    randomness: float = 0.0

    def __post_init__(self):
        for name in ("cooperativeness", "randomness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class UserGoal:
    """Slot constraints of a simulated user.

    ``constraints`` maps slot name to the fixed value, or to ``None`` when the
    user is flexible about that slot (any offered value is acceptable).
    """

    constraints: Mapping[str, Optional[str]]
    personality: PersonalityProfile = field(default_factory=PersonalityProfile)

    def __post_init__(self):
        object.__setattr__(self, "constraints", dict(self.constraints))

    def __contains__(self, slot) -> bool:
        return slot in self.constraints

    def is_flexible(self, slot: str) -> bool:
        return slot in self.constraints and self.constraints[slot] is None

    def value(self, slot: str) -> Optional[str]:
        return self.constraints.get(slot)

    def fixed(self) -> dict:
        return {s: v for s, v in self.constraints.items() if v is not None}

    def validate(self, schema: Schema) -> None:
        for s, v in self.constraints.items():
            if s not in schema:
                raise ValueError(f"goal slot {s!r} is not in the schema")
            if v is not None and v not in schema.slot(s).values:
                raise ValueError(f"goal value {v!r} is not in the domain of {s!r}")

    def to_dict(self) -> dict:
        return dict(self.constraints)


# --------------------------------------------------------------------------
# acts and turns


@dataclass(frozen=True)
class DialogueAct:
    """One act with ordered ``(slot, value)`` args.

    Values are concrete strings in a :class:`DialogueTurn` and :class:`Tag`
    members in a :class:`CoarseTurn`; ``None`` means a bare, value-less arg.
    """

    name: str
    args: tuple = ()

    def __post_init__(self):
        args = tuple((s, v) for s, v in self.args)
        object.__setattr__(self, "args", args)
        if not self.name:
            raise ValueError("act name must be nonempty")
        if len(args) > MAX_ARGS:
            raise CardinalityError(f"{self.name} has {len(args)} args (max {MAX_ARGS})")
        if self.name == "request" and any(v is not None for _, v in args):
            raise ValueError("request args carry no value")

    def __str__(self):
        inner = ", ".join(s if v is None else f"{s}={_fmt_value(v)}" for s, v in self.args)
        return f"{self.name}({inner})"


def _fmt_value(v):
    return v.value if isinstance(v, Tag) else v


def _check_acts(acts):
    acts = tuple(acts)
    if len(acts) > MAX_ACTS:
        raise CardinalityError(f"turn has {len(acts)} acts (max {MAX_ACTS})")
    return acts


@dataclass(frozen=True)
class DialogueTurn:
    speaker: Speaker
    acts: tuple
    malformed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "speaker", Speaker(self.speaker))
        object.__setattr__(self, "acts", _check_acts(self.acts))
        if not self.acts and not self.malformed:
            raise CardinalityError("a well-formed turn has at least one act")

    @property
    def act_names(self) -> tuple:
        return tuple(a.name for a in self.acts)

    def __str__(self):
        return " ".join(str(a) for a in self.acts)


@dataclass(frozen=True)
class CoarseTurn:
    acts: tuple = ()
    malformed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "acts", _check_acts(self.acts))
        for a in self.acts:
            for _, v in a.args:
                if v is not None and not isinstance(v, Tag):
                    raise TypeError(f"coarse arg value must be a Tag, got {v!r}")

    @property
    def act_names(self) -> tuple:
        return tuple(a.name for a in self.acts)

    def __str__(self):
        return " ".join(str(a) for a in self.acts)


# --------------------------------------------------------------------------
# vocabulary


class Vocabulary:
    SOS = "<s>"
    EOS = "</s>"
    LPAREN = "("
    RPAREN = ")"
    SPECIALS = (SOS, EOS, LPAREN, RPAREN)

    def __init__(self, tokens: Sequence[str]):
        self.tokens = tuple(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        for t in self.SPECIALS:
            if t not in self.index:
                raise ValueError(f"vocabulary lacks structural token {t!r}")
        self.act_names = frozenset(
            t for t in self.tokens if t not in self.SPECIALS and "=" not in t
        ) - self._slot_names()

    def _slot_names(self):
        return frozenset(t.split("=", 1)[0] for t in self.tokens if "=" in t)

    @property
    def slot_names(self) -> frozenset:
        return self._slot_names()

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, tok):
        return tok in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __hash__(self):
        return hash(self.tokens)

    @property
    def sos_id(self) -> int:
        return self.index[self.SOS]

    @property
    def eos_id(self) -> int:
        return self.index[self.EOS]

    # padded positions are always masked, so they reuse the end-of-sequence id
    pad_id = eos_id

    def encode(self, tokens: Iterable[str]) -> list:
        try:
            return [self.index[t] for t in tokens]
        except KeyError as e:
            raise KeyError(f"token {e.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Iterable[int]) -> list:
        return [self.tokens[i] for i in ids]


def build_vocabulary(schema: Iterable[Slot], act_names: Iterable[str]) -> Vocabulary:
    """Enumerate every token the grammar can produce, in sorted order."""
    slots = [s.name if isinstance(s, Slot) else str(s) for s in schema]
    acts = list(act_names)
    if not slots:
        raise ValueError("schema must be nonempty")
    if len(set(slots)) != len(slots):
        raise ValueError("duplicate slot names")
    if len(set(acts)) != len(acts):
        raise ValueError("duplicate act names")
    if set(slots) & set(acts):
        raise ValueError("slot and act names overlap")
    tokens = list(Vocabulary.SPECIALS)
    tokens += sorted(acts)
    tokens += sorted(slots)
    for s in sorted(slots):
        tokens += [f"{s}={t.value}" for t in TAG_ORDER]
    return Vocabulary(tokens)


def schema_vocabulary(schema: Schema) -> Vocabulary:
    return build_vocabulary(schema.slots, schema.acts)


# --------------------------------------------------------------------------
# coarse representation


def coarse_tag(slot: str, value: Optional[str], goal: UserGoal) -> Optional[Tag]:
    """Map one arg to its coarse tag; value-less args stay bare (``None``)."""
    if value is None:
        return None
    if goal.is_flexible(slot):
        return Tag.DONT_CARE
    if slot in goal:
        return Tag.VALUE_IN_GOAL if goal.value(slot) == value else Tag.VALUE_CONTRADICTS_GOAL
    return Tag.OTHER


def coarsen(turn: DialogueTurn, goal: UserGoal, schema: Optional[Schema] = None) -> CoarseTurn:
    acts = []
    for act in turn.acts:
        args = []
        for slot, value in act.args:
            if schema is not None and slot not in schema:
                raise CoarsenError(f"slot {slot!r} not in schema")
            args.append((slot, coarse_tag(slot, value, goal)))
        acts.append(DialogueAct(act.name, tuple(args)))
    return CoarseTurn(tuple(acts), malformed=turn.malformed)


def goal_tokens(goal: UserGoal) -> list:
    """Linearized goal: one ``slot=Tag`` token per constrained slot, sorted."""
    return [
        f"{s}={(Tag.DONT_CARE if goal.constraints[s] is None else Tag.VALUE_IN_GOAL).value}"
        for s in sorted(goal.constraints)
    ]


def linearize(ct: CoarseTurn, vocab: Optional[Vocabulary] = None) -> list:
    tokens = []
    for act in ct.acts:
        tokens.append(act.name)
        tokens.append(Vocabulary.LPAREN)
        for slot, tag in act.args:
            tokens.append(slot if tag is None else f"{slot}={tag.value}")
        tokens.append(Vocabulary.RPAREN)
    if vocab is not None:
        for t in tokens:
            if t not in vocab:
                raise KeyError(f"token {t!r} not in vocabulary")
    return tokens


def _parse_acts(tokens, vocab):
    """Yield ``(act, start, end)`` for each complete act; raise on the first error."""
    i, n = 0, len(tokens)
    LP, RP = Vocabulary.LPAREN, Vocabulary.RPAREN
    while i < n:
        name = tokens[i]
        if name in (LP, RP) or "=" in name or name in Vocabulary.SPECIALS:
            raise ParseError(i, f"expected an act name, got {name!r}")
        if vocab is not None and name not in vocab.act_names:
            raise ParseError(i, f"unknown act {name!r}")
        if i + 1 >= n or tokens[i + 1] != LP:
            raise ParseError(i + 1, f"expected '(' after {name!r}")
        j = i + 2
        args = []
        while True:
            if j >= n:
                raise ParseError(j, "unbalanced parentheses")
            tok = tokens[j]
            if tok == RP:
                break
            if tok == LP or tok in Vocabulary.SPECIALS:
                raise ParseError(j, f"unexpected {tok!r} inside an act")
            if vocab is not None and tok not in vocab:
                raise ParseError(j, f"unknown token {tok!r}")
            if "=" in tok:
                slot, raw = tok.split("=", 1)
                try:
                    tag = Tag(raw)
                except ValueError:
                    raise ParseError(j, f"unknown coarse value {raw!r}") from None
            else:
                if vocab is not None and tok not in vocab.slot_names:
                    raise ParseError(j, f"{tok!r} is not a slot")
                slot, tag = tok, None
            args.append((slot, tag))
            j += 1
        if len(args) > MAX_ARGS:
            raise ParseError(i, f"act {name!r} has {len(args)} args (max {MAX_ARGS})")
        try:
            act = DialogueAct(name, tuple(args))
        except ValueError as e:
            raise ParseError(i, str(e)) from None
        yield act, i, j + 1
        i = j + 1


def parse(tokens: Sequence[str], vocab: Optional[Vocabulary] = None) -> CoarseTurn:
    """Inverse of :func:`linearize`. Raises :class:`ParseError` on malformed input."""
    acts = []
    for act, start, _ in _parse_acts(list(tokens), vocab):
        if len(acts) == MAX_ACTS:
            raise ParseError(start, f"more than {MAX_ACTS} acts")
        acts.append(act)
    return CoarseTurn(tuple(acts))


def parse_recover(tokens: Sequence[str], vocab: Optional[Vocabulary] = None) -> CoarseTurn:
    """Parse decoder output, keeping the longest valid act prefix.

    The returned turn has ``malformed=True`` when anything was discarded.
    """
    acts = []
    try:
        for act, _, _ in _parse_acts(list(tokens), vocab):
            if len(acts) == MAX_ACTS:
                return CoarseTurn(tuple(acts), malformed=True)
            acts.append(act)
    except ParseError:
        return CoarseTurn(tuple(acts), malformed=True)
    return CoarseTurn(tuple(acts))


# --------------------------------------------------------------------------
# test-time value sampling


def _decoarsen_arg(slot, tag, goal, schema, rng):
    if tag is None or tag is Tag.REQUESTED:
        return None
    if slot not in schema:
        raise DecoarsenError(f"slot {slot!r} not in schema")
    domain = list(schema.slot(slot).values)
    if tag is Tag.VALUE_IN_GOAL:
        if slot not in goal:
            raise DecoarsenError(f"ValueInGoal for slot {slot!r}, which the goal does not constrain")
        if goal.is_flexible(slot):
            # a flexible goal accepts any value, so any knowledge-base value is "in the goal"
            return domain[rng.integers(len(domain))]
        return goal.value(slot)
    if tag is Tag.VALUE_CONTRADICTS_GOAL:
        eligible = [v for v in domain if v != goal.value(slot)]
        if not eligible:
            raise DecoarsenError(f"no value of {slot!r} contradicts the goal")
        return eligible[rng.integers(len(eligible))]
    return domain[rng.integers(len(domain))]


def decoarsen(
    ct: CoarseTurn,
    goal: UserGoal,
    history: Sequence[DialogueTurn],
    schema: Schema,
    rng,
    speaker: Speaker = Speaker.USER,
    on_error: str = "raise",
) -> DialogueTurn:
    """Replace coarse tags with concrete values.

    ``history`` is accepted for interface symmetry with the simulator loop;
    values come from the goal or the schema's knowledge base. With
    ``on_error="drop"`` offending args are removed and the turn is flagged
    malformed instead of raising.
    """
    malformed = ct.malformed
    acts = []
    for act in ct.acts:
        args = []
        for slot, tag in act.args:
            try:
                args.append((slot, _decoarsen_arg(slot, tag, goal, schema, rng)))
            except DecoarsenError:
                if on_error != "drop":
                    raise
                malformed = True
        acts.append(DialogueAct(act.name, tuple(args)))
    if not acts:
        malformed = True
    return DialogueTurn(speaker, tuple(acts), malformed=malformed)


def turn_to_dict(turn: DialogueTurn) -> dict:
    acts = []
    for a in turn.acts:
        args = []
        for s, v in a.args:
            arg = {"slot": s}
            if v is not None:
                arg["value"] = _fmt_value(v)
            args.append(arg)
        acts.append({"name": a.name, "args": args})
    d = {"speaker": turn.speaker.value, "acts": acts}
    if turn.malformed:
        d["malformed"] = True
    return d


def turn_from_dict(d: Mapping) -> DialogueTurn:
    acts = tuple(
        DialogueAct(a["name"], tuple((x["slot"], x.get("value")) for x in a["args"]))
        for a in d["acts"]
    )
    return DialogueTurn(Speaker(d["speaker"]), acts, malformed=d.get("malformed", False))
