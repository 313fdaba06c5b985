"""Mini-batch Adam training with validation-based model selection."""
from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..acts import Schema, coarsen, goal_tokens, linearize, schema_vocabulary
from ..numerics import AdamState, adam_update, clip_global_norm, substream
from .model import Example, TrainConfig, check_variant, forward, init_params, backward, make_batch
from .session import UserSimulator, length_feature

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("epoch", "train_loss", "val_loss", "val_token_acc")


class TrainingDiverged(RuntimeError):
    pass


def dialogue_to_example(dialogue, vocab) -> Example:
    """Coarsen and linearize a corpus dialogue into paired (S_t, U_t) token ids.

    A trailing system turn without a user reply (the closing turn) is dropped.
    The length feature is the dialogue's true number of user turns.
    """
    goal = dialogue.goal
    system, user = [], []
    for s, u in zip(dialogue.system_turns, dialogue.user_turns):
        system.append(vocab.encode(linearize(coarsen(s, goal))))
        user.append(vocab.encode(linearize(coarsen(u, goal))))
    return Example(
        goal=vocab.encode(goal_tokens(goal)),
        system=system,
        user=user,
        length_feature=length_feature(len(user)),
    )


def build_examples(dialogues, vocab):
    return [dialogue_to_example(d, vocab) for d in dialogues if d.user_turns]


@dataclass
class TrainResult:
    simulator: UserSimulator
    curves: list
    best_epoch: int
    final_params: dict = field(repr=False, default=None)

    def write_curves(self, path):
        write_curves(path, self.curves)


def write_curves(path, curves):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CURVE_COLUMNS)
        w.writeheader()
        for row in curves:
            w.writerow({k: (f"{row[k]:.6f}" if isinstance(row[k], float) else row[k]) for k in CURVE_COLUMNS})


def evaluate(params, variant, examples, vocab, config: TrainConfig, batch_size=None):
    """Teacher-forced loss and per-token accuracy with dropout off and z at its mean."""
    batch_size = batch_size or max(config.batch_size, 64)
    tot_loss = 0.0
    tot_correct = tot_tokens = 0
    for i in range(0, len(examples), batch_size):
        chunk = examples[i : i + batch_size]
        batch = make_batch(chunk, vocab.sos_id, vocab.eos_id, len(vocab))
        res = forward(params, batch, variant, alpha=config.alpha, training=False)
        tot_loss += res.loss * len(chunk)
        tot_correct += res.n_correct
        tot_tokens += res.n_tokens
    return tot_loss / len(examples), tot_correct / max(tot_tokens, 1)


def train(corpus, variant, config: TrainConfig, schema: Schema, val_corpus=None, progress=None):
    """Train one simulator variant.

    ``corpus`` is a list of dialogues; without ``val_corpus`` a seed-stable
    slice of ``config.val_fraction`` is held out. Returns the parameters of
    the epoch with the best validation token accuracy.
    """
    check_variant(variant)
    if not corpus:
        raise ValueError("empty corpus")
    vocab = schema_vocabulary(schema)
    if val_corpus is None:
        from ..corpusgen import split_corpus

        corpus, val_corpus = split_corpus(corpus, config.seed, config.val_fraction)
    train_ex = build_examples(corpus, vocab)
    val_ex = build_examples(val_corpus, vocab)
    if not train_ex or not val_ex:
        raise ValueError("training and validation sets must be nonempty")

    params = init_params(variant, len(vocab), config, substream(config.seed, "init"))
    opt = AdamState(lr=config.lr)
    shuffle_rng = substream(config.seed, "shuffle")
    drop_rng = substream(config.seed, "dropout")
    latent_rng = substream(config.seed, "latent")
    curves = []
    best = (-1.0, None, 0)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_ex))
        losses, weights = [], []
        for i in range(0, len(order), config.batch_size):
            chunk = [train_ex[j] for j in order[i : i + config.batch_size]]
            batch = make_batch(chunk, vocab.sos_id, vocab.eos_id, len(vocab))
            eps = None
            if variant in ("vhus", "vhusreg"):
                eps = latent_rng.standard_normal((batch.n_turns, config.latent_dim)).astype(config.dtype)
            res = forward(params, batch, variant, alpha=config.alpha, dropout=config.dropout,
                          training=True, rng=drop_rng, eps=eps)
            if not math.isfinite(res.loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {i // config.batch_size}: "
                    f"xent={res.xent} var={res.var} reg={res.reg}"
                )
            grads = backward(params, batch, res)
            clip_global_norm(grads, config.clip_norm)
            adam_update(params, grads, opt)
            losses.append(res.loss)
            weights.append(len(chunk))
        train_loss = float(np.average(losses, weights=weights))
        val_loss, val_acc = evaluate(params, variant, val_ex, vocab, config)
        row = {"epoch": epoch, "train_loss": train_loss, "val_loss": float(val_loss),
               "val_token_acc": float(val_acc)}
        curves.append(row)
        log.info("%s epoch %d train %.4f val %.4f acc %.4f", variant, epoch, train_loss, val_loss, val_acc)
        if progress is not None:
            progress(row)
        if val_acc > best[0]:
            best = (val_acc, copy.deepcopy(params), epoch)
    sim = UserSimulator(variant, best[1], vocab, schema, config)
    return TrainResult(sim, curves, best[2], final_params=params)
