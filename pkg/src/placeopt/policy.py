"""Transformer policy over placement sequences, with exact hand-written
gradients, plus the independent critic network and checkpoint I/O.

Arrays are batch-first: coordinate inputs are (B, S, 2) where S = n+m and
row order follows the state sequence. All math is 64-bit.
"""
from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .env import PlacementState, sample_action  # noqa: F401  (re-exported)
from .errors import CheckpointError, DomainError, PolicyError
from .spatial import ProblemInstance, _as_generator

VARIANTS = ("swap", "mask-swap")

# Inside the per-instance sequence normalization: 1/sqrt(var + eps).
_NORM_EPS = 1e-12

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    """Network dimensions, logit clipping constant, and masking variant."""

    d_h: int = 128
    d_ff: int = 256
    num_layers: int = 3
    clip_c: float = 10.0
    variant: str = "swap"

    def __post_init__(self):
        if self.d_h < 2 or self.d_h % 2 != 0:
            raise DomainError("d_h must be even and >= 2")
        if self.d_ff < 1:
            raise DomainError("d_ff must be >= 1")
        if self.num_layers < 1:
            raise DomainError("num_layers must be >= 1")
        if self.clip_c <= 0.0:
            raise DomainError("clip_c must be positive")
        if self.variant not in VARIANTS:
            raise DomainError(f"variant must be one of {VARIANTS}")


def policy_param_shapes(config: NetConfig) -> dict:
    """Canonical name -> shape map for the actor parameters."""
    d_h, d_ff = config.d_h, config.d_ff
    shapes = {"nfe_w": (2, d_h), "nfe_b": (d_h,)}
    for layer in range(config.num_layers):
        p = f"enc{layer}_"
        shapes[p + "wq"] = (d_h, d_h)
        shapes[p + "wk"] = (d_h, d_h)
        shapes[p + "wv"] = (d_h, d_h)
        shapes[p + "ff_w1"] = (d_h, d_ff)
        shapes[p + "ff_b1"] = (d_ff,)
        shapes[p + "ff_w2"] = (d_ff, d_h)
        shapes[p + "ff_b2"] = (d_h,)
        shapes[p + "bn_scale"] = (d_h,)
        shapes[p + "bn_shift"] = (d_h,)
    for name in ("dec_pool_w", "dec_loc_w", "dec_wq", "dec_wk"):
        shapes[name] = (d_h, d_h)
    return shapes


def critic_param_shapes(config: NetConfig) -> dict:
    """Canonical name -> shape map for the critic parameters."""
    d_h, d_ff = config.d_h, config.d_ff
    return {
        "emb_w": (2, d_h),
        "head_w1": (d_h, d_ff),
        "head_b1": (d_ff,),
        "head_w2": (d_ff,),
        "head_b2": (1,),
    }


def _init_from_shapes(shapes, d_h, rng):
    bound = 1.0 / math.sqrt(d_h)
    return {name: rng.uniform(-bound, bound, size=shape)
            for name, shape in shapes.items()}


def init_policy_params(config: NetConfig, rng_seed) -> dict:
    """Seeded uniform init in [-1/sqrt(d_h), 1/sqrt(d_h)] for every array."""
    rng = _as_generator(rng_seed)
    return _init_from_shapes(policy_param_shapes(config), config.d_h, rng)


def init_critic_params(config: NetConfig, rng_seed) -> dict:
    rng = _as_generator(rng_seed)
    return _init_from_shapes(critic_param_shapes(config), config.d_h, rng)


def zeros_like_params(params: dict) -> dict:
    return {name: np.zeros_like(arr) for name, arr in params.items()}


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _pfe_cached(seq_len, d_h):
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    dim = np.arange(d_h)[None, :]
    angle = pos / np.power(10000.0, (dim // 2) / d_h)
    out = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    out.setflags(write=False)
    return out


def position_feature_embedding(seq_len: int, d_h: int) -> np.ndarray:
    """Sinusoidal embedding of sequence positions: entry (i, d) is
    sin(i / 10000^(floor(d/2)/d_h)) for even d, cos of the same for odd d."""
    if d_h < 2:
        raise DomainError("d_h must be >= 2")
    return _pfe_cached(int(seq_len), int(d_h))


def _state_coords(state: PlacementState, instance: ProblemInstance):
    return instance.coords[state.order]


def node_feature_embedding(state: PlacementState, instance: ProblemInstance,
                           params: dict) -> np.ndarray:
    """Linear projection of each sequence position's coordinates to d_h dims."""
    return _state_coords(state, instance) @ params["nfe_w"] + params["nfe_b"]


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def _softmax_last(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _norm_forward(y, scale, shift):
    """Per-feature normalization over the sequence axis within each instance."""
    mu = y.mean(axis=1, keepdims=True)
    centered = y - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _NORM_EPS)
    nhat = centered * inv
    return nhat * scale + shift, (nhat, inv)


def _norm_backward(dout, cache, scale):
    nhat, inv = cache
    g_scale = (dout * nhat).sum(axis=(0, 1))
    g_shift = dout.sum(axis=(0, 1))
    dnhat = dout * scale
    dy = inv * (dnhat - dnhat.mean(axis=1, keepdims=True)
                - nhat * (dnhat * nhat).mean(axis=1, keepdims=True))
    return dy, g_scale, g_shift


def _attention_forward(h, wq, wk, wv, d_h):
    q = h @ wq
    k = h @ wk
    v = h @ wv
    scores = q @ k.transpose(0, 2, 1) / math.sqrt(d_h)
    attn = _softmax_last(scores)
    return attn @ v, (q, k, v, attn)


def _encode_forward(xy, params, config):
    """xy: (B, S, 2) state-ordered coordinates. Returns (H, cache)."""
    seq_len = xy.shape[1]
    h = xy @ params["nfe_w"] + params["nfe_b"]
    h = h + position_feature_embedding(seq_len, config.d_h)
    layers = []
    for layer in range(config.num_layers):
        p = f"enc{layer}_"
        scale = params[p + "bn_scale"]
        shift = params[p + "bn_shift"]
        att, att_cache = _attention_forward(
            h, params[p + "wq"], params[p + "wk"], params[p + "wv"], config.d_h)
        h1, bn1 = _norm_forward(h + att, scale, shift)
        u = h1 @ params[p + "ff_w1"] + params[p + "ff_b1"]
        act = np.tanh(u)
        f2 = act @ params[p + "ff_w2"] + params[p + "ff_b2"]
        h2, bn2 = _norm_forward(h1 + f2, scale, shift)
        if not np.all(np.isfinite(h2)):
            raise PolicyError(f"non-finite encoder output at layer {layer}")
        layers.append({"h_in": h, "att": att_cache, "bn1": bn1,
                       "h1": h1, "act": act, "bn2": bn2})
        h = h2
    return h, {"xy": xy, "layers": layers}


def _contract(x, dy):
    """sum_b x[b]^T dy[b] for (B, S, d) arrays, as a single GEMM."""
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def _encode_backward(dh, cache, params, config, grads):
    for layer in reversed(range(config.num_layers)):
        p = f"enc{layer}_"
        lc = cache["layers"][layer]
        scale = params[p + "bn_scale"]
        dy2, g_s, g_b = _norm_backward(dh, lc["bn2"], scale)
        grads[p + "bn_scale"] += g_s
        grads[p + "bn_shift"] += g_b
        dh1 = dy2.copy()
        act = lc["act"]
        grads[p + "ff_w2"] += _contract(act, dy2)
        grads[p + "ff_b2"] += dy2.sum(axis=(0, 1))
        du = (dy2 @ params[p + "ff_w2"].T) * (1.0 - act * act)
        grads[p + "ff_w1"] += _contract(lc["h1"], du)
        grads[p + "ff_b1"] += du.sum(axis=(0, 1))
        dh1 += du @ params[p + "ff_w1"].T
        dy1, g_s, g_b = _norm_backward(dh1, lc["bn1"], scale)
        grads[p + "bn_scale"] += g_s
        grads[p + "bn_shift"] += g_b
        dh_in = dy1.copy()
        q, k, v, attn = lc["att"]
        da = dy1 @ v.transpose(0, 2, 1)
        dv = attn.transpose(0, 2, 1) @ dy1
        dscores = (da - (da * attn).sum(axis=-1, keepdims=True)) * attn
        inv_sqrt = 1.0 / math.sqrt(config.d_h)
        dq = dscores @ k * inv_sqrt
        dk = dscores.transpose(0, 2, 1) @ q * inv_sqrt
        h_in = lc["h_in"]
        grads[p + "wq"] += _contract(h_in, dq)
        grads[p + "wk"] += _contract(h_in, dk)
        grads[p + "wv"] += _contract(h_in, dv)
        dh_in += dq @ params[p + "wq"].T
        dh_in += dk @ params[p + "wk"].T
        dh_in += dv @ params[p + "wv"].T
        dh = dh_in
    xy = cache["xy"]
    grads["nfe_w"] += _contract(xy, dh)
    grads["nfe_b"] += dh.sum(axis=(0, 1))


@lru_cache(maxsize=64)
def _pair_mask(size, n_placed, variant):
    """Boolean (S, S) matrix of selectable position pairs."""
    allowed = np.ones((size, size), dtype=bool)
    np.fill_diagonal(allowed, False)
    if variant == "mask-swap":
        mixed = np.zeros((size, size), dtype=bool)
        mixed[:n_placed, n_placed:] = True
        mixed[n_placed:, :n_placed] = True
        allowed &= mixed
    allowed.setflags(write=False)
    return allowed


def _decode_forward(h, params, config, n_placed):
    pooled = h.max(axis=1)
    pool_idx = h.argmax(axis=1)
    hc = (pooled @ params["dec_pool_w"])[:, None, :] + h @ params["dec_loc_w"]
    qc = hc @ params["dec_wq"]
    kc = hc @ params["dec_wk"]
    m = kc @ qc.transpose(0, 2, 1)
    tm = np.tanh(m)
    z = config.clip_c * tm
    size = h.shape[1]
    allowed = _pair_mask(size, n_placed, config.variant)
    if not allowed.any():
        raise DomainError("every position pair is masked")
    zmax = np.where(allowed, z, -np.inf).max(axis=(1, 2), keepdims=True)
    e = np.where(allowed, np.exp(z - zmax), 0.0)
    pr = e / e.sum(axis=(1, 2), keepdims=True)
    if not np.all(np.isfinite(pr)):
        raise PolicyError("non-finite action probabilities in decoder")
    cache = {"h": h, "pooled": pooled, "pool_idx": pool_idx, "hc": hc,
             "qc": qc, "kc": kc, "tm": tm, "pr": pr, "allowed": allowed}
    return pr, cache


def _decode_backward(dz, cache, params, config, grads):
    """dz: gradient w.r.t. the clipped logits (zero on masked entries).
    Returns the gradient w.r.t. the encoder output."""
    tm, hc, qc, kc = cache["tm"], cache["hc"], cache["qc"], cache["kc"]
    dm = dz * config.clip_c * (1.0 - tm * tm)
    dkc = dm @ qc
    dqc = dm.transpose(0, 2, 1) @ kc
    grads["dec_wq"] += _contract(hc, dqc)
    grads["dec_wk"] += _contract(hc, dkc)
    dhc = dqc @ params["dec_wq"].T + dkc @ params["dec_wk"].T
    h = cache["h"]
    grads["dec_loc_w"] += _contract(h, dhc)
    dh = dhc @ params["dec_loc_w"].T
    dhc_sum = dhc.sum(axis=1)
    grads["dec_pool_w"] += cache["pooled"].T @ dhc_sum
    dpooled = dhc_sum @ params["dec_pool_w"].T
    batch, d_h = dpooled.shape
    np.add.at(dh, (np.arange(batch)[:, None], cache["pool_idx"],
                   np.arange(d_h)[None, :]), dpooled)
    return dh


def forward_action_probs(xy, params, config: NetConfig, n_placed: int):
    """Batched policy forward pass: (B, S, 2) coords -> (B, S, S) action
    probabilities plus the cache needed for a backward pass."""
    h, enc_cache = _encode_forward(xy, params, config)
    pr, dec_cache = _decode_forward(h, params, config, n_placed)
    return pr, {"enc": enc_cache, "dec": dec_cache}


def backward_action_logits(dz, cache, params, config: NetConfig) -> dict:
    """Gradients of a scalar whose derivative w.r.t. the masked clipped
    logits is `dz` (masked entries must be zero)."""
    grads = zeros_like_params(params)
    dh = _decode_backward(dz, cache["dec"], params, config, grads)
    _encode_backward(dh, cache["enc"], params, config, grads)
    return grads


# ---------------------------------------------------------------------------
# Spec-facing single-state operations
# ---------------------------------------------------------------------------

def self_attention(h, wq, wk, wv) -> np.ndarray:
    """Single-sequence scaled dot-product self-attention."""
    out, _ = _attention_forward(h[None], wq, wk, wv, h.shape[1])
    return out[0]


def encode(state: PlacementState, instance: ProblemInstance, params: dict,
           config: NetConfig) -> np.ndarray:
    """Embed a state and run the stacked encoder; returns (n+m, d_h)."""
    xy = _state_coords(state, instance)[None]
    h, _ = _encode_forward(xy, params, config)
    return h[0]


def decode_action_probs(h_enc, params: dict, config: NetConfig,
                        n_placed: int) -> np.ndarray:
    """Compatibility-matrix decoder: encoder output -> joint distribution
    over ordered position pairs (diagonal masked, variant mask applied)."""
    pr, _ = _decode_forward(np.asarray(h_enc, dtype=np.float64)[None],
                            params, config, n_placed)
    return pr[0]


def action_probs(state: PlacementState, instance: ProblemInstance,
                 params: dict, config: NetConfig) -> np.ndarray:
    """Full policy forward pass for one state."""
    xy = _state_coords(state, instance)[None]
    pr, _ = forward_action_probs(xy, params, config, instance.n)
    return pr[0]


class TransformerPolicy:
    """Bundles parameters with their config; callable as a rollout policy."""

    def __init__(self, params: dict, config: NetConfig):
        self.params = params
        self.config = config

    def __call__(self, state, instance):
        return action_probs(state, instance, self.params, self.config)

    @classmethod
    def initialize(cls, config: NetConfig, rng_seed):
        return cls(init_policy_params(config, rng_seed), config)


# ---------------------------------------------------------------------------
# Critic
# ---------------------------------------------------------------------------

def critic_values(xy, critic_params: dict):
    """Batched critic forward: (B, S, 2) coords -> (B,) values."""
    emb = xy @ critic_params["emb_w"]
    hbar = emb.mean(axis=1)
    u = hbar @ critic_params["head_w1"] + critic_params["head_b1"]
    act = np.tanh(u)
    vals = act @ critic_params["head_w2"] + critic_params["head_b2"][0]
    return vals, {"xy": xy, "hbar": hbar, "act": act}


def critic_backward(dvals, cache, critic_params: dict) -> dict:
    grads = zeros_like_params(critic_params)
    act, hbar, xy = cache["act"], cache["hbar"], cache["xy"]
    grads["head_b2"] += dvals.sum(keepdims=True)
    grads["head_w2"] += act.T @ dvals
    du = dvals[:, None] * critic_params["head_w2"][None, :] * (1.0 - act * act)
    grads["head_w1"] += hbar.T @ du
    grads["head_b1"] += du.sum(axis=0)
    dhbar = du @ critic_params["head_w1"].T
    demb = np.broadcast_to(dhbar[:, None, :] / xy.shape[1], xy.shape[:2] + dhbar.shape[1:])
    grads["emb_w"] += _contract(xy, demb)
    return grads


def value_estimate(state: PlacementState, instance: ProblemInstance,
                   critic_params: dict) -> float:
    """Critic value: mean-pooled location embeddings through the 2-layer head."""
    xy = _state_coords(state, instance)[None]
    vals, _ = critic_values(xy, critic_params)
    return float(vals[0])


# ---------------------------------------------------------------------------
# Gradients of the actor / critic objectives over a trace segment
# ---------------------------------------------------------------------------

def _segment_coords(steps, instance):
    return np.stack([instance.coords[s.state.order] for s in steps])


def actor_grad(steps, advantages, params: dict, config: NetConfig,
               instance: ProblemInstance) -> dict:
    """Gradient of sum_t advantage_t * log pi(action_t | state_t) w.r.t. the
    actor parameters, via exact backward accumulation."""
    advantages = np.asarray(advantages, dtype=np.float64)
    if len(steps) != len(advantages):
        raise DomainError("advantages must match the segment length")
    if len(steps) == 0:
        return zeros_like_params(params)
    xy = _segment_coords(steps, instance)
    pr, cache = forward_action_probs(xy, params, config, instance.n)
    dz = -advantages[:, None, None] * pr
    for t, step in enumerate(steps):
        dz[t, step.action.a, step.action.b] += advantages[t]
    return backward_action_logits(dz, cache, params, config)


def critic_grad(steps, targets, critic_params: dict,
                instance: ProblemInstance) -> dict:
    """Gradient of 0.5 * sum_t (target_t - V(state_t))^2 w.r.t. the critic
    parameters (equals sum_t -delta_t * grad V)."""
    targets = np.asarray(targets, dtype=np.float64)
    if len(steps) != len(targets):
        raise DomainError("targets must match the segment length")
    if len(steps) == 0:
        return zeros_like_params(critic_params)
    xy = _segment_coords(steps, instance)
    vals, cache = critic_values(xy, critic_params)
    return critic_backward(-(targets - vals), cache, critic_params)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _encode_group(group):
    out = {}
    for name, arr in group.items():
        a = np.ascontiguousarray(arr, dtype=np.float64)
        out[name] = {"shape": list(a.shape),
                     "data": base64.b64encode(a.astype("<f8").tobytes()).decode("ascii")}
    return out


def _decode_group(obj):
    group = {}
    for name, entry in obj.items():
        raw = base64.b64decode(entry["data"])
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        shape = tuple(entry["shape"])
        if arr.size != int(np.prod(shape)):
            raise CheckpointError(f"array {name!r} has {arr.size} values, "
                                  f"shape says {shape}")
        group[name] = arr.reshape(shape)
    return group


@dataclass
class Checkpoint:
    config: NetConfig
    params: dict
    critic_params: dict | None = None
    extras: dict | None = None
    meta: dict | None = None


def save_checkpoint(path, config: NetConfig, params: dict,
                    critic_params: dict | None = None,
                    extras: dict | None = None, meta: dict | None = None):
    """Write a self-describing checkpoint: format version, config header,
    and named flat little-endian float64 arrays."""
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": {"d_h": config.d_h, "d_ff": config.d_ff,
                   "num_layers": config.num_layers, "clip_c": config.clip_c,
                   "variant": config.variant},
        "params": _encode_group(params),
        "critic_params": _encode_group(critic_params) if critic_params else None,
        "extras": {k: _encode_group(v) for k, v in extras.items()} if extras else None,
        "meta": meta or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"not a checkpoint file: {exc}") from None
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    try:
        config = NetConfig(**doc["config"])
        params = _decode_group(doc["params"])
        critic = _decode_group(doc["critic_params"]) if doc.get("critic_params") else None
        extras = ({k: _decode_group(v) for k, v in doc["extras"].items()}
                  if doc.get("extras") else None)
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    expected = policy_param_shapes(config)
    got = {name: arr.shape for name, arr in params.items()}
    if got != expected:
        raise CheckpointError("checkpoint parameters do not match its config dimensions")
    if critic is not None:
        if {n: a.shape for n, a in critic.items()} != critic_param_shapes(config):
            raise CheckpointError("checkpoint critic parameters do not match its config")
    return Checkpoint(config=config, params=params, critic_params=critic,
                      extras=extras, meta=doc.get("meta", {}))
