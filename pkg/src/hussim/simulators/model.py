"""Hierarchical user-simulator networks and their losses.

Four variants share one computation graph:

* ``hus``      goal-initialised dialogue RNN, decoder starts from ``h^D_t``.
* ``vhus``     as ``hus`` plus a Gaussian latent; the decoder starts from
               ``tanh(W [h^D_t; z] + b)`` and the loss adds ``alpha * KL``.
* ``husreg``   zero-initialised dialogue RNN, decoder starts from
               ``tanh(W [h^D_t; h^C] + b)``, plus bag-of-words regularisers.
* ``vhusreg``  both: decoder starts from ``tanh(W [h^D_t; h^C; z] + b)``.

A batch holds whole dialogues. Loss = mean token cross-entropy over the batch
plus, per dialogue, the turn-summed KL and BOW terms averaged over dialogues.

Parameter names (shapes with E=embedding, H=state, Z=latent, V=vocab)::

    embedding            (V, E)
    goal_enc.{W,U,b}     (E, 3H) (H, 3H) (3H,)
    turn_enc.{W,U,b}     (E, 3H) (H, 3H) (3H,)
    dialogue.{W,U,b}     (H+1, 3H) (H, 3H) (3H,)
    decoder.{W,U,b}      (E, 3H) (H, 3H) (3H,)
    out.{W,b}            (H, V) (V,)
    prior_mu.{W,b}       (H, Z) (Z,)          vhus, vhusreg
    prior_logvar.{W,b}   (H, Z) (Z,)          vhus, vhusreg
    post_mu.{W,b}        (H, Z) (Z,)          vhus, vhusreg
    post_logvar.{W,b}    (H, Z) (Z,)          vhus, vhusreg
    blend.{W,b}          (H+[H]+[Z], H) (H,)  all but hus
    bow_dialogue.{W,b}   (H, V) (V,)          husreg, vhusreg
    bow_system.{W,b}     (H, V) (V,)          husreg, vhusreg
    bow_user.{W,b}       (2V, V) (V,)         husreg, vhusreg
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from ..numerics import (
    GruParams,
    clamp_logvar,
    dropout_mask,
    gru_backward,
    gru_forward,
    kl_logvar,
    log_softmax,
    masked_mean,
    masked_mean_backward,
    sigmoid,
    uniform_init,
)

VARIANTS = ("hus", "vhus", "husreg", "vhusreg")
MAX_TURNS = 20


def is_variational(variant):
    return variant in ("vhus", "vhusreg")


def is_regularized(variant):
    return variant in ("husreg", "vhusreg")


def check_variant(variant):
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return variant


@dataclass
class TrainConfig:
    embedding_dim: int = 150
    state_dim: int = 200
    latent_dim: int = 16
    lr: float = 1e-3
    dropout: float = 0.5
    batch_size: int = 32
    epochs: int = 10
    alpha: float = 0.1
    max_decode_len: int = 42
    seed: int = 0
    clip_norm: float | None = 5.0
    val_fraction: float = 0.1
    dtype: str = "float32"
    init_scale: float = 0.08

    def __post_init__(self):
        for name in ("embedding_dim", "state_dim", "latent_dim", "batch_size", "epochs", "max_decode_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def init_params(variant, vocab_size, config: TrainConfig, rng):
    check_variant(variant)
    dt = np.dtype(config.dtype)
    E, H, Z, V = config.embedding_dim, config.state_dim, config.latent_dim, vocab_size
    s = config.init_scale
    params = {"embedding": uniform_init(rng, (V, E), s, dt)}

    def gru(prefix, inp):
        g = GruParams.init(rng, inp, H, dt, s)
        params[prefix + ".W"], params[prefix + ".U"], params[prefix + ".b"] = g.W, g.U, g.b

    def linear(prefix, inp, out):
        params[prefix + ".W"] = uniform_init(rng, (inp, out), s, dt)
        params[prefix + ".b"] = np.zeros(out, dtype=dt)

    gru("goal_enc", E)
    gru("turn_enc", E)
    gru("dialogue", H + 1)
    gru("decoder", E)
    linear("out", H, V)
    if is_variational(variant):
        for name in ("prior_mu", "prior_logvar", "post_mu", "post_logvar"):
            linear(name, H, Z)
    if variant != "hus":
        linear("blend", blend_input_dim(variant, H, Z), H)
    if is_regularized(variant):
        linear("bow_dialogue", H, V)
        linear("bow_system", H, V)
        linear("bow_user", 2 * V, V)
    return params


def blend_input_dim(variant, H, Z):
    return H + (H if is_regularized(variant) else 0) + (Z if is_variational(variant) else 0)


# --------------------------------------------------------------------------
# batches


@dataclass
class Example:
    """One dialogue as token ids: goal, paired system/user turns, length feature."""

    goal: list
    system: list
    user: list
    length_feature: float

    def __post_init__(self):
        if len(self.system) != len(self.user):
            raise ValueError("system and user turn counts differ")
        if not self.system:
            raise ValueError("empty dialogue")
        if not self.goal:
            raise ValueError("empty goal sequence")


def _pad(seqs, pad):
    L = max(1, max(len(s) for s in seqs))
    ids = np.full((len(seqs), L), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), L), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, mask


def _bow(seqs, V):
    out = np.zeros((len(seqs), V))
    for i, s in enumerate(seqs):
        out[i, list(s)] = 1.0
    return out


@dataclass
class Batch:
    goal: np.ndarray
    goal_mask: np.ndarray
    sys: np.ndarray
    sys_mask: np.ndarray
    usr_in: np.ndarray
    usr_out: np.ndarray
    usr_mask: np.ndarray
    turn_b: np.ndarray
    turn_t: np.ndarray
    turn_mask: np.ndarray
    length: np.ndarray
    bow_goal: np.ndarray
    bow_sys: np.ndarray
    bow_usr: np.ndarray
    n_dialogues: int = field(init=False)

    def __post_init__(self):
        self.n_dialogues = self.goal.shape[0]

    @property
    def n_turns(self):
        return self.sys.shape[0]

    @property
    def n_tokens(self):
        return int(self.usr_mask.sum())


def make_batch(examples, sos_id, eos_id, vocab_size):
    """Pad a list of :class:`Example` into flat turn-major arrays."""
    goal, goal_mask = _pad([e.goal for e in examples], eos_id)
    sys_seqs, usr_seqs, tb, tt = [], [], [], []
    for b, e in enumerate(examples):
        for t, (s, u) in enumerate(zip(e.system, e.user)):
            if not s:
                raise ValueError("empty system turn")
            sys_seqs.append(s)
            usr_seqs.append(u)
            tb.append(b)
            tt.append(t)
    sys, sys_mask = _pad(sys_seqs, eos_id)
    usr_in, usr_mask = _pad([[sos_id] + list(u) for u in usr_seqs], eos_id)
    usr_out, _ = _pad([list(u) + [eos_id] for u in usr_seqs], eos_id)
    T = max(len(e.system) for e in examples)
    turn_mask = np.zeros((len(examples), T), dtype=bool)
    for b, e in enumerate(examples):
        turn_mask[b, : len(e.system)] = True
    return Batch(
        goal=goal,
        goal_mask=goal_mask,
        sys=sys,
        sys_mask=sys_mask,
        usr_in=usr_in,
        usr_out=usr_out,
        usr_mask=usr_mask,
        turn_b=np.array(tb),
        turn_t=np.array(tt),
        turn_mask=turn_mask,
        length=np.array([e.length_feature for e in examples]),
        bow_goal=_bow([e.goal for e in examples], vocab_size),
        bow_sys=_bow(sys_seqs, vocab_size),
        bow_usr=_bow(usr_seqs, vocab_size),
    )


# --------------------------------------------------------------------------
# forward / backward


@dataclass
class ForwardResult:
    loss: float
    xent: float
    var: float
    reg: float
    n_tokens: int
    n_correct: int
    logits: np.ndarray
    kl_per_turn: np.ndarray
    reg_per_turn: np.ndarray
    cache: dict = field(repr=False, default=None)


def forward(params, batch: Batch, variant, *, alpha=0.1, dropout=0.0, training=False,
            rng=None, eps=None, z_mode="sample"):
    """Compute the variant's loss on a batch.

    Dropout is applied to encoder outputs (goal and turn encodings) and to
    decoder input embeddings when ``training`` is set. For latent variants
    ``eps`` fixes the reparameterisation noise (shape ``(n_turns, Z)``);
    otherwise it is drawn from ``rng`` in training mode, and the posterior
    mean is used at evaluation (``z_mode="mean"`` forces the mean always).
    """
    check_variant(variant)
    E = params["embedding"]
    dt = E.dtype
    B = batch.n_dialogues
    N = batch.n_turns
    H = params["turn_enc.U"].shape[0]
    V = E.shape[0]
    sb, st = batch.turn_b, batch.turn_t
    T = batch.turn_mask.shape[1]
    c = {}

    def drop(shape):
        return dropout_mask(shape, dropout, training, rng, dt)

    # goal encoder
    gp = GruParams.from_dict(params, "goal_enc")
    Hg, c["goal"] = gru_forward(E[batch.goal], batch.goal_mask, np.zeros((B, H), dt), gp)
    hC = masked_mean(Hg, batch.goal_mask)
    c["dm_goal"] = drop(hC.shape)
    if c["dm_goal"] is not None:
        hC = hC * c["dm_goal"]

    # shared system-turn encoder
    tp = GruParams.from_dict(params, "turn_enc")
    Hs, c["turn"] = gru_forward(E[batch.sys], batch.sys_mask, np.zeros((N, H), dt), tp)
    hS = masked_mean(Hs, batch.sys_mask)
    c["dm_sys"] = drop(hS.shape)
    if c["dm_sys"] is not None:
        hS = hS * c["dm_sys"]

    # dialogue-level RNN over [h^S_t; length]
    Xd = np.zeros((B, T, H + 1), dtype=dt)
    Xd[sb, st, :H] = hS
    Xd[:, :, H] = batch.length[:, None]
    h0 = hC if not is_regularized(variant) else np.zeros((B, H), dt)
    dp = GruParams.from_dict(params, "dialogue")
    Hd, c["dialogue"] = gru_forward(Xd, batch.turn_mask, h0, dp)
    hD = Hd[sb, st]

    # latent
    kl_n = np.zeros(N, dtype=dt)
    parts = [hD]
    if is_regularized(variant):
        parts.append(hC[sb])
    if is_variational(variant):
        prev = np.where((st == 0)[:, None], h0[sb], Hd[sb, np.maximum(st - 1, 0)])
        mu_x = prev @ params["prior_mu.W"] + params["prior_mu.b"]
        lv_x, clip_x = clamp_logvar(prev @ params["prior_logvar.W"] + params["prior_logvar.b"])
        mu_y = hD @ params["post_mu.W"] + params["post_mu.b"]
        lv_y, clip_y = clamp_logvar(hD @ params["post_logvar.W"] + params["post_logvar.b"])
        if eps is None:
            if training and z_mode == "sample":
                eps = rng.standard_normal(mu_y.shape).astype(dt)
            else:
                eps = np.zeros_like(mu_y)
        sd_y = np.exp(0.5 * lv_y)
        z = mu_y + sd_y * eps
        kl_n, kl_grads = kl_logvar(mu_x, lv_x, mu_y, lv_y)
        parts.append(z)
        c.update(prev=prev, clip_x=clip_x, clip_y=clip_y, sd_y=sd_y, eps=eps, kl_grads=kl_grads)
    if variant == "hus":
        init = hD
    else:
        blend_in = np.concatenate(parts, axis=1)
        init = np.tanh(blend_in @ params["blend.W"] + params["blend.b"])
        c["blend_in"] = blend_in
    c["init"] = init

    # decoder with teacher forcing
    xu = E[batch.usr_in]
    c["dm_dec"] = drop(xu.shape)
    if c["dm_dec"] is not None:
        xu = xu * c["dm_dec"]
    decp = GruParams.from_dict(params, "decoder")
    Hu, c["decoder"] = gru_forward(xu, batch.usr_mask, init, decp)
    logits = Hu @ params["out.W"] + params["out.b"]
    logp = log_softmax(logits)
    um = batch.usr_mask
    n_tok = int(um.sum())
    tok_lp = np.take_along_axis(logp, batch.usr_out[:, :, None], axis=2)[:, :, 0]
    xent = float(-(tok_lp * um).sum() / n_tok)
    n_correct = int(((logits.argmax(axis=2) == batch.usr_out) & um).sum())

    # bag-of-words regularisers
    reg_n = np.zeros(N, dtype=dt)
    if is_regularized(variant):
        bD = sigmoid(hD @ params["bow_dialogue.W"] + params["bow_dialogue.b"])
        bS = sigmoid(hS @ params["bow_system.W"] + params["bow_system.b"])
        bcat = np.concatenate([bD, bS], axis=1)
        bu = sigmoid(bcat @ params["bow_user.W"] + params["bow_user.b"])
        tgt_c = batch.bow_goal[sb]
        reg_n = (
            ((bu - tgt_c) ** 2).mean(axis=1)
            + ((bD - batch.bow_usr) ** 2).mean(axis=1)
            + ((bS - batch.bow_sys) ** 2).mean(axis=1)
        )
        c.update(bD=bD, bS=bS, bcat=bcat, bu=bu, tgt_c=tgt_c)

    var = float(alpha * kl_n.sum() / B)
    reg = float(reg_n.sum() / B)
    c.update(hC=hC, hS=hS, hD=hD, Hu=Hu, logp=logp, n_tok=n_tok, h0=h0, variant=variant,
             alpha=alpha, B=B, H=H, V=V, T=T)
    return ForwardResult(
        loss=xent + var + reg,
        xent=xent,
        var=var,
        reg=reg,
        n_tokens=n_tok,
        n_correct=n_correct,
        logits=logits,
        kl_per_turn=kl_n,
        reg_per_turn=reg_n,
        cache=c,
    )


def backward(params, batch: Batch, res: ForwardResult):
    """Gradients of ``res.loss`` with respect to every parameter."""
    c = res.cache
    variant = c["variant"]
    B, H, V, T = c["B"], c["H"], c["V"], c["T"]
    E = params["embedding"]
    dt = E.dtype
    sb, st = batch.turn_b, batch.turn_t
    N = batch.n_turns
    g = {k: np.zeros_like(v) for k, v in params.items()}

    def add_gru(prefix, gg):
        g[prefix + ".W"] += gg.W
        g[prefix + ".U"] += gg.U
        g[prefix + ".b"] += gg.b

    # cross-entropy
    um = batch.usr_mask
    dlogits = np.exp(c["logp"])
    np.put_along_axis(
        dlogits,
        batch.usr_out[:, :, None],
        np.take_along_axis(dlogits, batch.usr_out[:, :, None], axis=2) - 1.0,
        axis=2,
    )
    dlogits *= (um / c["n_tok"])[:, :, None].astype(dt)
    Hu = c["Hu"]
    g["out.W"] += Hu.reshape(-1, H).T @ dlogits.reshape(-1, V)
    g["out.b"] += dlogits.sum(axis=(0, 1))
    dHu = dlogits @ params["out.W"].T
    dxu, dinit, gd = gru_backward(dHu, c["decoder"])
    add_gru("decoder", gd)
    if c["dm_dec"] is not None:
        dxu = dxu * c["dm_dec"]
    np.add.at(g["embedding"], batch.usr_in, dxu)

    dhD = np.zeros((N, H), dtype=dt)
    dhS = np.zeros((N, H), dtype=dt)
    dhC = np.zeros((B, H), dtype=dt)

    # bag-of-words terms, each mean-squared over V and averaged over dialogues
    if is_regularized(variant):
        k = 2.0 / (V * B)
        bD, bS, bu = c["bD"], c["bS"], c["bu"]
        dau = k * (bu - c["tgt_c"]) * bu * (1.0 - bu)
        g["bow_user.W"] += c["bcat"].T @ dau
        g["bow_user.b"] += dau.sum(axis=0)
        dbcat = dau @ params["bow_user.W"].T
        daD = (k * (bD - batch.bow_usr) + dbcat[:, :V]) * bD * (1.0 - bD)
        daS = (k * (bS - batch.bow_sys) + dbcat[:, V:]) * bS * (1.0 - bS)
        g["bow_dialogue.W"] += c["hD"].T @ daD
        g["bow_dialogue.b"] += daD.sum(axis=0)
        g["bow_system.W"] += c["hS"].T @ daS
        g["bow_system.b"] += daS.sum(axis=0)
        dhD += daD @ params["bow_dialogue.W"].T
        dhS += daS @ params["bow_system.W"].T

    # decoder initial state
    dz = None
    if variant == "hus":
        dhD += dinit
    else:
        da = dinit * (1.0 - c["init"] ** 2)
        g["blend.W"] += c["blend_in"].T @ da
        g["blend.b"] += da.sum(axis=0)
        dblend = da @ params["blend.W"].T
        dhD += dblend[:, :H]
        off = H
        if is_regularized(variant):
            np.add.at(dhC, sb, dblend[:, off : off + H])
            off += H
        if is_variational(variant):
            dz = dblend[:, off:]

    dHd = np.zeros((B, T, H), dtype=dt)
    dh0 = np.zeros((B, H), dtype=dt)
    if is_variational(variant):
        s = c["alpha"] / B
        dmu_x, dlv_x, dmu_y, dlv_y = (s * x for x in c["kl_grads"])
        dmu_y = dmu_y + dz
        dlv_y = dlv_y + dz * c["eps"] * 0.5 * c["sd_y"]
        dlv_x = dlv_x * c["clip_x"]
        dlv_y = dlv_y * c["clip_y"]
        prev, hD = c["prev"], c["hD"]
        g["prior_mu.W"] += prev.T @ dmu_x
        g["prior_mu.b"] += dmu_x.sum(axis=0)
        g["prior_logvar.W"] += prev.T @ dlv_x
        g["prior_logvar.b"] += dlv_x.sum(axis=0)
        g["post_mu.W"] += hD.T @ dmu_y
        g["post_mu.b"] += dmu_y.sum(axis=0)
        g["post_logvar.W"] += hD.T @ dlv_y
        g["post_logvar.b"] += dlv_y.sum(axis=0)
        dhD += dmu_y @ params["post_mu.W"].T + dlv_y @ params["post_logvar.W"].T
        dprev = dmu_x @ params["prior_mu.W"].T + dlv_x @ params["prior_logvar.W"].T
        first = st == 0
        np.add.at(dh0, sb[first], dprev[first])
        dHd[sb[~first], st[~first] - 1] += dprev[~first]

    dHd[sb, st] += dhD
    dXd, dh0_d, gd = gru_backward(dHd, c["dialogue"])
    add_gru("dialogue", gd)
    dh0 += dh0_d
    if not is_regularized(variant):
        dhC += dh0
    dhS += dXd[sb, st, :H]

    # system-turn encoder
    if c["dm_sys"] is not None:
        dhS = dhS * c["dm_sys"]
    dHs = masked_mean_backward(dhS, batch.sys_mask)
    dxs, _, gt = gru_backward(dHs, c["turn"])
    add_gru("turn_enc", gt)
    np.add.at(g["embedding"], batch.sys, dxs)

    # goal encoder
    if c["dm_goal"] is not None:
        dhC = dhC * c["dm_goal"]
    dHg = masked_mean_backward(dhC, batch.goal_mask)
    dxg, _, gg = gru_backward(dHg, c["goal"])
    add_gru("goal_enc", gg)
    np.add.at(g["embedding"], batch.goal, dxg)
    return g


def loss_and_grads(params, batch, variant, **kw):
    res = forward(params, batch, variant, **kw)
    return res, backward(params, batch, res)
