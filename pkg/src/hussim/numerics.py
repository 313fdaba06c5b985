"""Small differentiable toolkit used by the simulators.

Everything here is plain numpy with hand-written backward passes: GRU cells
run over padded, masked batches; linear maps are inlined by callers. The
functions operate on whatever float dtype they are handed, so correctness
tests run in float64 while training may use float32.

GRU convention::

    r  = sigmoid(x W_r + h U_r + b_r)
    z  = sigmoid(x W_z + h U_z + b_z)
    c  = tanh(x W_c + (r * h) U_c + b_c)
    h' = (1 - z) * h + z * c

``W`` is stored as ``(input_dim, 3 * state_dim)`` with gate blocks ordered
``r, z, c``; ``U`` likewise as ``(state_dim, 3 * state_dim)``.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

INIT_SCALE = 0.08
LOGVAR_CLAMP = 10.0
CHECKPOINT_FORMAT = "hussim-checkpoint/1"


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for a named purpose (``"init"``, ``"dropout"``, ...)."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode()), *extra])


def sigmoid(x):
    # tanh form is overflow-free for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def uniform_init(rng, shape, scale=INIT_SCALE, dtype=np.float64):
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


# --------------------------------------------------------------------------
# GRU


@dataclass
class GruParams:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        H = self.U.shape[0]
        if self.U.shape != (H, 3 * H):
            raise ValueError(f"U must be (H, 3H), got {self.U.shape}")
        if self.W.ndim != 2 or self.W.shape[1] != 3 * H:
            raise ValueError(f"W must be (input_dim, {3 * H}), got {self.W.shape}")
        if self.b.shape != (3 * H,):
            raise ValueError(f"b must be ({3 * H},), got {self.b.shape}")

    @property
    def input_dim(self):
        return self.W.shape[0]

    @property
    def state_dim(self):
        return self.U.shape[0]

    @classmethod
    def init(cls, rng, input_dim, state_dim, dtype=np.float64, scale=INIT_SCALE):
        return cls(
            uniform_init(rng, (input_dim, 3 * state_dim), scale, dtype),
            uniform_init(rng, (state_dim, 3 * state_dim), scale, dtype),
            np.zeros(3 * state_dim, dtype=dtype),
        )

    @classmethod
    def from_dict(cls, params, prefix):
        return cls(params[prefix + ".W"], params[prefix + ".U"], params[prefix + ".b"])


def gru_step(x, h, p: GruParams):
    """One GRU transition for a single vector or a batch of row vectors."""
    x = np.asarray(x)
    h = np.asarray(h)
    if x.shape[-1] != p.input_dim or h.shape[-1] != p.state_dim:
        raise ValueError(
            f"shape mismatch: x {x.shape}, h {h.shape} for a "
            f"{p.input_dim}->{p.state_dim} cell"
        )
    H = p.state_dim
    a = x @ p.W + p.b
    hu = h @ p.U[:, : 2 * H]
    r = sigmoid(a[..., :H] + hu[..., :H])
    z = sigmoid(a[..., H : 2 * H] + hu[..., H:])
    c = np.tanh(a[..., 2 * H :] + (r * h) @ p.U[:, 2 * H :])
    return (1.0 - z) * h + z * c


def gru_forward(X, mask, h0, p: GruParams):
    """Run a GRU over a padded batch.

    X is ``(B, L, D)``, mask ``(B, L)`` with 1 for real steps, h0 ``(B, H)``.
    Masked steps carry the previous state forward unchanged. Returns the
    ``(B, L, H)`` state sequence and a cache for :func:`gru_backward`.
    """
    B, L, _ = X.shape
    H = p.state_dim
    dt = p.U.dtype
    xw = (X.reshape(B * L, -1) @ p.W).reshape(B, L, 3 * H) + p.b
    Urz = p.U[:, : 2 * H]
    Uc = p.U[:, 2 * H :]
    states = np.empty((B, L, H), dtype=dt)
    prev = np.empty((B, L, H), dtype=dt)
    R = np.empty((B, L, H), dtype=dt)
    Z = np.empty((B, L, H), dtype=dt)
    C = np.empty((B, L, H), dtype=dt)
    m = mask.astype(dt)[:, :, None]
    h = h0
    for t in range(L):
        a = xw[:, t]
        hu = h @ Urz
        r = sigmoid(a[:, :H] + hu[:, :H])
        z = sigmoid(a[:, H : 2 * H] + hu[:, H:])
        c = np.tanh(a[:, 2 * H :] + (r * h) @ Uc)
        hn = h + z * (c - h)
        prev[:, t] = h
        R[:, t] = r
        Z[:, t] = z
        C[:, t] = c
        h = m[:, t] * hn + (1.0 - m[:, t]) * h
        states[:, t] = h
    cache = (X, m, prev, R, Z, C, p)
    return states, cache


def gru_backward(dstates, cache):
    """Backpropagate ``dstates`` (gradient w.r.t. every output state).

    Returns ``(dX, dh0, grads)`` with grads a :class:`GruParams` of gradients.
    """
    X, m, prev, R, Z, C, p = cache
    B, L, _ = X.shape
    H = p.state_dim
    Urz = p.U[:, : 2 * H]
    Uc = p.U[:, 2 * H :]
    dxw = np.empty((B, L, 3 * H), dtype=dstates.dtype)
    dUrz = np.zeros_like(Urz)
    dUc = np.zeros_like(Uc)
    dh_next = np.zeros((B, H), dtype=dstates.dtype)
    for t in range(L - 1, -1, -1):
        dh = dstates[:, t] + dh_next
        mt = m[:, t]
        dhn = mt * dh
        h = prev[:, t]
        r, z, c = R[:, t], Z[:, t], C[:, t]
        dh_prev = (1.0 - mt) * dh + dhn * (1.0 - z)
        dac = dhn * z * (1.0 - c * c)
        rh = r * h
        dUc += rh.T @ dac
        drh = dac @ Uc.T
        dh_prev += drh * r
        dar = drh * h * r * (1.0 - r)
        daz = dhn * (c - h) * z * (1.0 - z)
        darz = np.concatenate([dar, daz], axis=1)
        dUrz += h.T @ darz
        dh_prev += darz @ Urz.T
        dxw[:, t, : 2 * H] = darz
        dxw[:, t, 2 * H :] = dac
        dh_next = dh_prev
    flat = dxw.reshape(B * L, 3 * H)
    dW = X.reshape(B * L, -1).T @ flat
    db = flat.sum(axis=0)
    dX = (flat @ p.W.T).reshape(X.shape)
    grads = GruParams(dW, np.concatenate([dUrz, dUc], axis=1), db)
    return dX, dh_next, grads


def masked_mean(states, mask):
    """Average of the unmasked states along axis 1 (empty rows give zeros)."""
    m = mask.astype(states.dtype)
    n = np.maximum(m.sum(axis=1), 1.0)[:, None]
    return (states * m[:, :, None]).sum(axis=1) / n


def masked_mean_backward(denc, mask):
    m = mask.astype(denc.dtype)
    n = np.maximum(m.sum(axis=1), 1.0)[:, None]
    return m[:, :, None] * (denc / n)[:, None, :]


def encode_sequence(tokens, embeddings, p: GruParams, h0=None, extra_feature=None):
    """Encode a token-id sequence; the encoding is the mean hidden state.

    ``extra_feature`` (e.g. the dialogue-length feature) is appended to the
    encoding when given.
    """
    tokens = list(tokens)
    if not tokens:
        raise ValueError("cannot encode an empty sequence")
    h = np.zeros(p.state_dim, dtype=p.U.dtype) if h0 is None else np.asarray(h0)
    states = []
    for tok in tokens:
        h = gru_step(embeddings[tok], h, p)
        states.append(h)
    enc = np.mean(states, axis=0)
    if extra_feature is not None:
        enc = np.concatenate([enc, np.asarray([extra_feature], dtype=enc.dtype)])
    return states, enc


# --------------------------------------------------------------------------
# losses


def log_softmax(logits, axis=-1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax_xent(logits, target_index):
    """Cross-entropy of one logit vector against a target index.

    Returns ``(loss, dloss/dlogits)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    if not 0 <= target_index < logits.shape[-1]:
        raise IndexError(f"target {target_index} outside vocabulary of {logits.shape[-1]}")
    logp = log_softmax(logits)
    grad = np.exp(logp)
    grad[target_index] -= 1.0
    return float(-logp[target_index]), grad


def kl_diag_gaussians(mu_x, var_x, mu_y, var_y):
    """KL(N(mu_x, diag var_x) || N(mu_y, diag var_y))."""
    mu_x, var_x, mu_y, var_y = (np.asarray(a, dtype=np.float64) for a in (mu_x, var_x, mu_y, var_y))
    if np.any(var_x <= 0) or np.any(var_y <= 0):
        raise ValueError("variances must be positive")
    return float(
        0.5 * np.sum(np.log(var_y / var_x) + (var_x + (mu_x - mu_y) ** 2) / var_y - 1.0)
    )


def kl_logvar(mu_x, lv_x, mu_y, lv_y):
    """Row-wise KL between diagonal Gaussians given log-variances, with gradients.

    Returns ``(kl, (dmu_x, dlv_x, dmu_y, dlv_y))`` where ``kl`` has one entry
    per row.
    """
    # written in d = lv_x - lv_y so that each term, expm1(d) - d and the mean
    # gap, is nonnegative in floating point and exactly 0 for equal inputs
    d = lv_x - lv_y
    em1 = np.expm1(d)
    inv_y = np.exp(-lv_y)
    diff = mu_x - mu_y
    sq = diff * diff * inv_y
    kl = 0.5 * np.sum((em1 - d) + sq, axis=-1)
    dmu_x = diff * inv_y
    dlv_x = 0.5 * em1
    dlv_y = -0.5 * (em1 + sq)
    return kl, (dmu_x, dlv_x, -dmu_x, dlv_y)


def clamp_logvar(raw):
    """Clamp an affine output used as a log-variance; returns value and pass-through mask."""
    out = np.clip(raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    return out, (np.abs(raw) < LOGVAR_CLAMP).astype(raw.dtype)


# --------------------------------------------------------------------------
# dropout


def dropout_mask(shape, p, training, rng, dtype=np.float64):
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return None
    return (rng.random(shape) >= p).astype(dtype) / (1.0 - p)


def dropout(x, p, training, rng=None):
    """Inverted dropout: zero each entry with probability ``p`` and rescale survivors."""
    mask = dropout_mask(np.shape(x), p, training, rng, dtype=np.asarray(x).dtype)
    return x if mask is None else x * mask


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(params: dict, grads: dict, state: AdamState):
    """One bias-corrected Adam step, applied in place. Returns ``(params, state)``."""
    if set(grads) - set(params):
        raise KeyError(f"gradients for unknown params: {sorted(set(grads) - set(params))}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != param shape {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params, state


def clip_global_norm(grads: dict, max_norm):
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total


# --------------------------------------------------------------------------
# gradient checking


def grad_check(loss_fn, params: dict, eps=1e-5, n_samples=20, rng=None, grads=None):
    """Compare analytic gradients to central differences on sampled coordinates.

    ``loss_fn(params)`` returns ``(loss, grads)``. If ``grads`` is passed it is
    checked instead of the one ``loss_fn`` reports, which lets callers verify
    that a corrupted gradient is caught. Returns the max relative error
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    loss, analytic = loss_fn(params)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    if grads is not None:
        analytic = grads
    worst = 0.0
    for name in sorted(params):
        p = params[name]
        g = analytic[name]
        k = min(n_samples, p.size)
        idx = rng.choice(p.size, size=k, replace=False)
        flat = p.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            lp, _ = loss_fn(params)
            flat[i] = orig - eps
            lm, _ = loss_fn(params)
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise FloatingPointError(f"non-finite loss perturbing {name}[{i}]")
            num = (lp - lm) / (2 * eps)
            a = float(g.reshape(-1)[i])
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: dict, meta: dict):
    """Write params as little-endian arrays plus a JSON metadata record."""
    arrays = {}
    for name, arr in params.items():
        arr = np.asarray(arr)
        arrays[name] = arr.astype(arr.dtype.newbyteorder("<"))
    header = {"format": CHECKPOINT_FORMAT, "param_names": sorted(params), **meta}
    arrays["__meta__"] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
        params = {name: data[name].copy() for name in meta["param_names"]}
    return params, meta
