"""Hierarchical seq2seq user simulators for task-oriented dialogue.

Modules: ``acts`` (dialogue-act domain and grammar), ``corpusgen`` (agenda
user vs. FSM agent corpus), ``numerics`` (GRU, losses, Adam, checkpoints),
``simulators`` (HUS, VHUS, HUSReg, VHUSReg), ``policies`` (rule-based
system policies), ``arena`` (rollouts and metrics) and ``cli``.
"""
from .acts import (
    CoarseTurn,
    DialogueAct,
    DialogueTurn,
    PersonalityProfile,
    Schema,
    Slot,
    Speaker,
    Tag,
    UserGoal,
    Vocabulary,
    build_vocabulary,
    coarsen,
    decoarsen,
    linearize,
    movie_schema,
    parse,
    parse_recover,
)
from .arena import MetricsReport, Transcript, evaluate, run_dialogue
from .corpusgen import CorpusConfig, Dialogue, generate_corpus
from .policies import PRESETS, PolicyConfig, policy_config
from .simulators import VARIANTS, TrainConfig, UserSimulator, train

__version__ = "0.1.0"
