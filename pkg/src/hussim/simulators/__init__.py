"""Hierarchical seq2seq user simulators: HUS, VHUS, HUSReg and VHUSReg."""
from .model import (
    VARIANTS,
    Batch,
    Example,
    ForwardResult,
    TrainConfig,
    backward,
    forward,
    init_params,
    loss_and_grads,
    make_batch,
)
from .session import SimSession, UserSimulator, clamp_length, length_feature, sample_dialogue_length
from .training import TrainResult, TrainingDiverged, build_examples, dialogue_to_example, train, write_curves


def _single(goal_tokens, system_token_seqs, length_feature, gold_user_token_seqs, sos_id, eos_id, V):
    ex = Example(list(goal_tokens), [list(s) for s in system_token_seqs],
                 [list(u) for u in gold_user_token_seqs], float(length_feature))
    return make_batch([ex], sos_id, eos_id, V)


def _forward_single(variant, goal_tokens, system_token_seqs, length_feature, gold_user_token_seqs,
                    params, training=False, *, sos_id=0, eos_id=1, rng=None, eps=None,
                    alpha=0.1, dropout=0.5):
    V = params["embedding"].shape[0]
    batch = _single(goal_tokens, system_token_seqs, length_feature, gold_user_token_seqs, sos_id, eos_id, V)
    res = forward(params, batch, variant, alpha=alpha, dropout=dropout if training else 0.0,
                  training=training, rng=rng, eps=eps)
    lengths = batch.usr_mask.sum(axis=1)
    per_turn = [res.logits[i, : lengths[i]] for i in range(batch.n_turns)]
    return res, per_turn


def hus_forward(goal_tokens, system_token_seqs, length_feature, gold_user_token_seqs, params,
                training=False, **kw):
    """Cross-entropy and per-turn logits of the HUS model on one dialogue."""
    res, logits = _forward_single("hus", goal_tokens, system_token_seqs, length_feature,
                                  gold_user_token_seqs, params, training, **kw)
    return res.xent, logits


def vhus_forward(goal_tokens, system_token_seqs, length_feature, gold_user_token_seqs, params,
                 training=False, **kw):
    res, _ = _forward_single("vhus", goal_tokens, system_token_seqs, length_feature,
                             gold_user_token_seqs, params, training, **kw)
    return res.xent + res.var, {"kl_per_turn": res.kl_per_turn, "xent": res.xent, "var": res.var}


def husreg_forward(goal_tokens, system_token_seqs, length_feature, gold_user_token_seqs, params,
                   training=False, **kw):
    res, _ = _forward_single("husreg", goal_tokens, system_token_seqs, length_feature,
                             gold_user_token_seqs, params, training, **kw)
    return res.xent + res.reg, {"bow_per_turn": res.reg_per_turn, "xent": res.xent, "reg": res.reg}


def vhusreg_forward(goal_tokens, system_token_seqs, length_feature, gold_user_token_seqs, params,
                    training=False, **kw):
    res, _ = _forward_single("vhusreg", goal_tokens, system_token_seqs, length_feature,
                             gold_user_token_seqs, params, training, **kw)
    return res.loss, {"kl_per_turn": res.kl_per_turn, "bow_per_turn": res.reg_per_turn,
                      "xent": res.xent, "var": res.var, "reg": res.reg}
