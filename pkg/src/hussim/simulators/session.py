"""Trained simulators and turn-by-turn inference sessions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..acts import CoarseTurn, Schema, UserGoal, Vocabulary, goal_tokens, linearize
from ..numerics import (
    GruParams,
    encode_sequence,
    gru_step,
    load_checkpoint,
    save_checkpoint,
)
from .model import MAX_TURNS, TrainConfig, check_variant, is_regularized, is_variational

LENGTH_MEAN = 5.0
LENGTH_STD = 2.0


def length_feature(n_user_turns) -> float:
    return n_user_turns / MAX_TURNS


def clamp_length(raw) -> int:
    return int(min(MAX_TURNS, max(1, round(raw))))


def sample_dialogue_length(rng) -> int:
    """Target dialogue length (user turns) for test-time conditioning."""
    return clamp_length(rng.normal(LENGTH_MEAN, LENGTH_STD))


@dataclass
class UserSimulator:
    """Frozen parameters of one variant plus what is needed to run them."""

    variant: str
    params: dict
    vocab: Vocabulary
    schema: Schema
    config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        check_variant(self.variant)

    def session(self, goal: UserGoal, rng, length: Optional[int] = None) -> "SimSession":
        return SimSession(self, goal, rng, length)

    def save(self, path):
        meta = {
            "variant": self.variant,
            "vocabulary": list(self.vocab.tokens),
            "schema": self.schema.to_dict(),
            "train_config": self.config.to_dict(),
        }
        save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path) -> "UserSimulator":
        params, meta = load_checkpoint(path)
        return cls(
            variant=meta["variant"],
            params=params,
            vocab=Vocabulary(meta["vocabulary"]),
            schema=Schema.from_dict(meta["schema"]),
            config=TrainConfig.from_dict(meta["train_config"]),
        )


class SimSession:
    """Mutable per-dialogue state of a simulated user.

    Holds the goal encoding, the running dialogue-RNN state, the previous
    state (for the latent prior), the sampled target length and a turn
    counter. Not shareable across dialogues.
    """

    def __init__(self, sim: UserSimulator, goal: UserGoal, rng, length: Optional[int] = None):
        self.sim = sim
        self.variant = sim.variant
        self.goal = goal
        self.rng = rng
        self.length = sample_dialogue_length(rng) if length is None else clamp_length(length)
        self.turn = 0
        p = sim.params
        self._emb = p["embedding"]
        self._turn_enc = GruParams.from_dict(p, "turn_enc")
        self._dialogue = GruParams.from_dict(p, "dialogue")
        self._decoder = GruParams.from_dict(p, "decoder")
        ids = sim.vocab.encode(goal_tokens(goal))
        _, self.h_goal = encode_sequence(ids, self._emb, GruParams.from_dict(p, "goal_enc"))
        H = self._dialogue.state_dim
        self.h_dialogue = np.zeros(H, dtype=self._emb.dtype) if is_regularized(self.variant) else self.h_goal
        self.h_prev = self.h_dialogue

    def _lin(self, name, x):
        p = self.sim.params
        return x @ p[name + ".W"] + p[name + ".b"]

    def respond(self, system_turn: CoarseTurn) -> list:
        """Advance the dialogue state with a system turn and greedily decode a reply."""
        if self.turn >= MAX_TURNS:
            raise RuntimeError(f"session exceeded {MAX_TURNS} turns")
        vocab = self.sim.vocab
        ids = vocab.encode(linearize(system_turn)) or [vocab.eos_id]
        _, enc = encode_sequence(ids, self._emb, self._turn_enc,
                                 extra_feature=length_feature(self.length))
        self.h_prev = self.h_dialogue
        self.h_dialogue = gru_step(enc, self.h_dialogue, self._dialogue)
        self.turn += 1
        return self._decode(self._initial_state())

    def _initial_state(self):
        hD = self.h_dialogue
        if self.variant == "hus":
            return hD
        parts = [hD]
        if is_regularized(self.variant):
            parts.append(self.h_goal)
        if is_variational(self.variant):
            mu = self._lin("prior_mu", self.h_prev)
            lv = np.clip(self._lin("prior_logvar", self.h_prev), -10.0, 10.0)
            eps = self.rng.standard_normal(mu.shape).astype(mu.dtype)
            parts.append(mu + np.exp(0.5 * lv) * eps)
        return np.tanh(self._lin("blend", np.concatenate(parts)))

    def _decode(self, h):
        vocab = self.sim.vocab
        out_W = self.sim.params["out.W"]
        out_b = self.sim.params["out.b"]
        tok = vocab.sos_id
        out = []
        for _ in range(self.sim.config.max_decode_len):
            h = gru_step(self._emb[tok], h, self._decoder)
            logits = h @ out_W + out_b
            logits[vocab.sos_id] = -np.inf
            tok = int(np.argmax(logits))
            if tok == vocab.eos_id:
                break
            out.append(vocab.tokens[tok])
        return out
