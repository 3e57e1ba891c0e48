"""Transformer encoder with hand-written forward and backward passes.

Weights are stored column-per-input rather than in the usual row layout:
``embed.word`` is H x |D| (one column per token),
``embed.position`` is H x P, projections are (out, in) and applied as
``x @ W.T``.

Every function accepts either a single sequence (``ids`` of shape ``(n,)``)
or a padded batch (``(B, n)`` plus ``lengths``); batches are what training
uses, single sequences what the gradient checks use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .tagging import NUM_TAGS

LN_EPS = 1e-12
MASK_VALUE = -1e9
_GELU_C = math.sqrt(2.0 / math.pi)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    layers: int = 2
    hidden: int = 64
    heads: int = 4
    ffn: int = 256
    max_positions: int = 128
    tags: int = NUM_TAGS
    dropout: float = 0.1

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError("encoder needs at least one layer")
        if self.hidden < 1 or self.heads < 1 or self.hidden % self.heads:
            raise ConfigError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if self.ffn < 1 or self.vocab_size < 1 or self.max_positions < 1:
            raise ConfigError("sizes must be positive")
        if self.tags != NUM_TAGS:
            raise ConfigError(f"tag count must be {NUM_TAGS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    H, F = config.hidden, config.ffn
    shapes: dict[str, tuple[int, ...]] = {
        "embed.word": (H, config.vocab_size),
        "embed.position": (H, config.max_positions),
    }
    for l in range(1, config.layers + 1):
        p = f"layer{l}."
        for name in ("query", "key", "value", "output"):
            shapes[p + "attention." + name] = (H, H)
        shapes[p + "attention_norm.gain"] = (H,)
        shapes[p + "attention_norm.bias"] = (H,)
        shapes[p + "ffn.in.weight"] = (F, H)
        shapes[p + "ffn.in.bias"] = (F,)
        shapes[p + "ffn.out.weight"] = (H, F)
        shapes[p + "ffn.out.bias"] = (H,)
        shapes[p + "ffn_norm.gain"] = (H,)
        shapes[p + "ffn_norm.bias"] = (H,)
    shapes["output.weight"] = (config.tags, H)
    shapes["output.bias"] = (config.tags,)
    return shapes


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    x = rng.normal(0.0, 1.0, size=shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.normal(0.0, 1.0, size=int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


def init_params(config: EncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".gain"):
            params[name] = np.ones(shape)
        elif name.endswith(".bias"):
            params[name] = np.zeros(shape)
        else:
            params[name] = truncated_normal(rng, shape)
    return params


def layer_params(params: dict[str, np.ndarray], layer: int) -> dict[str, np.ndarray]:
    """The tensors of one block, keyed without the ``layer{l}.`` prefix."""
    prefix = f"layer{layer}."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


@dataclass
class EncoderActivations:
    """Hidden states h^0..h^L and per-token logits."""

    h: list[np.ndarray]
    logits: np.ndarray
    lengths: np.ndarray = field(repr=False, default=None)
    _cache: Optional[dict] = field(repr=False, default=None)


# -- small differentiable pieces ------------------------------------------

def layer_norm(x, gain, bias):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv)


def layer_norm_backward(dy, gain, cache):
    xhat, inv = cache
    axes = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=axes)
    dbias = dy.sum(axis=axes)
    dxhat = dy * gain
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dgain, dbias


def _gelu_tanh(x):
    return np.tanh(_GELU_C * x * (1.0 + 0.044715 * x * x))


def gelu(x, t=None):
    """tanh approximation of GELU; ``t`` may carry a precomputed inner tanh."""
    if t is None:
        t = _gelu_tanh(x)
    return 0.5 * x * (1.0 + t)


def gelu_grad(x, t=None):
    if t is None:
        t = _gelu_tanh(x)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _dropout_mask(rng, shape, rate):
    if rng is None or rate <= 0.0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _matmul_grad(dy, x):
    """dW for y = x @ W.T with leading batch axes flattened."""
    return dy.reshape(-1, dy.shape[-1]).T @ x.reshape(-1, x.shape[-1])


# -- embedding --------------------------------------------------------------

def _as_batch(token_ids, lengths):
    ids = np.asarray(token_ids)
    single = ids.ndim == 1
    if single:
        ids = ids[None, :]
    if lengths is None:
        lengths = np.full(ids.shape[0], ids.shape[1])
    return ids, np.asarray(lengths), single


def embed(token_ids, params, config: EncoderConfig) -> np.ndarray:
    """Token column of ``embed.word`` plus the position column, per row."""
    ids = np.asarray(token_ids)
    n = ids.shape[-1]
    if n > config.max_positions:
        raise ValueError(f"sequence of {n} tokens exceeds max_positions={config.max_positions}")
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise ValueError("token id out of range")
    return params["embed.word"].T[ids] + params["embed.position"].T[:n]


# -- transformer block ------------------------------------------------------

def _block_forward(x, lp, config, key_bias, rng):
    B, n, H = x.shape
    A = config.heads
    d = H // A
    scale = 1.0 / math.sqrt(d)

    def heads(t):
        return t.reshape(B, n, A, d).transpose(0, 2, 1, 3)

    q = heads(x @ lp["attention.query"].T)
    k = heads(x @ lp["attention.key"].T)
    v = heads(x @ lp["attention.value"].T)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    if key_bias is not None:
        scores = scores + key_bias
    p = softmax(scores)
    m1 = _dropout_mask(rng, p.shape, config.dropout)
    pd = p if m1 is None else p * m1
    ctx = (pd @ v).transpose(0, 2, 1, 3).reshape(B, n, H)
    a = ctx @ lp["attention.output"].T
    m2 = _dropout_mask(rng, a.shape, config.dropout)
    if m2 is not None:
        a = a * m2
    x1, ln1 = layer_norm(x + a, lp["attention_norm.gain"], lp["attention_norm.bias"])
    f = x1 @ lp["ffn.in.weight"].T + lp["ffn.in.bias"]
    gt = _gelu_tanh(f)
    g = gelu(f, gt)
    f2 = g @ lp["ffn.out.weight"].T + lp["ffn.out.bias"]
    m3 = _dropout_mask(rng, f2.shape, config.dropout)
    if m3 is not None:
        f2 = f2 * m3
    out, ln2 = layer_norm(x1 + f2, lp["ffn_norm.gain"], lp["ffn_norm.bias"])
    if not np.isfinite(out).all():
        raise FloatingPointError("non-finite activation in transformer block")
    cache = dict(x=x, q=q, k=k, v=v, p=p, pd=pd, m1=m1, m2=m2, m3=m3, ctx=ctx,
                 ln1=ln1, x1=x1, f=f, g=g, gt=gt, ln2=ln2, scale=scale)
    return out, cache


def _block_backward(dout, lp, config, c):
    B, n, H = dout.shape
    A = config.heads
    d = H // A
    grads = {}

    dr2, grads["ffn_norm.gain"], grads["ffn_norm.bias"] = layer_norm_backward(
        dout, lp["ffn_norm.gain"], c["ln2"])
    dx1 = dr2.copy()
    df2 = dr2 if c["m3"] is None else dr2 * c["m3"]
    grads["ffn.out.weight"] = _matmul_grad(df2, c["g"])
    grads["ffn.out.bias"] = df2.reshape(-1, H).sum(0)
    df = (df2 @ lp["ffn.out.weight"]) * gelu_grad(c["f"], c["gt"])
    grads["ffn.in.weight"] = _matmul_grad(df, c["x1"])
    grads["ffn.in.bias"] = df.reshape(-1, df.shape[-1]).sum(0)
    dx1 += df @ lp["ffn.in.weight"]

    dr1, grads["attention_norm.gain"], grads["attention_norm.bias"] = layer_norm_backward(
        dx1, lp["attention_norm.gain"], c["ln1"])
    dx = dr1.copy()
    da = dr1 if c["m2"] is None else dr1 * c["m2"]
    grads["attention.output"] = _matmul_grad(da, c["ctx"])
    dctx = (da @ lp["attention.output"]).reshape(B, n, A, d).transpose(0, 2, 1, 3)
    dpd = dctx @ c["v"].transpose(0, 1, 3, 2)
    dv = c["pd"].transpose(0, 1, 3, 2) @ dctx
    dp = dpd if c["m1"] is None else dpd * c["m1"]
    p = c["p"]
    dscores = p * (dp - (dp * p).sum(-1, keepdims=True)) * c["scale"]
    dq = dscores @ c["k"]
    dk = dscores.transpose(0, 1, 3, 2) @ c["q"]

    x = c["x"]
    for name, dt in (("query", dq), ("key", dk), ("value", dv)):
        dt = dt.transpose(0, 2, 1, 3).reshape(B, n, H)
        grads["attention." + name] = _matmul_grad(dt, x)
        dx += dt @ lp["attention." + name]
    return dx, grads


def transformer_block(h_in, lp, config: EncoderConfig, lengths=None, rng=None) -> np.ndarray:
    """Post-LN block: LN(x + MHA(x)) then LN(x1 + FFN(x1))."""
    x = np.asarray(h_in, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
    out, _ = _block_forward(x, lp, config, _key_bias(x.shape[0], x.shape[1], lengths), rng)
    return out[0] if single else out


def _key_bias(B, n, lengths):
    if lengths is None:
        return None
    lengths = np.asarray(lengths)
    if (lengths >= n).all():
        return None
    pad = np.arange(n)[None, :] >= lengths[:, None]
    return np.where(pad, MASK_VALUE, 0.0)[:, None, None, :]


# -- full network -----------------------------------------------------------

def forward(token_ids, params, config: EncoderConfig, lengths=None,
            rng: Optional[np.random.Generator] = None) -> EncoderActivations:
    """Embedding, L blocks, output projection. Dropout only when ``rng`` is given."""
    ids, lengths, single = _as_batch(token_ids, lengths)
    B, n = ids.shape
    h0 = embed(ids, params, config)
    key_bias = _key_bias(B, n, lengths)
    hs = [h0]
    caches = []
    x = h0
    for l in range(1, config.layers + 1):
        x, cache = _block_forward(x, layer_params(params, l), config, key_bias, rng)
        hs.append(x)
        caches.append(cache)
    logits = x @ params["output.weight"].T + params["output.bias"]
    if single:
        hs = [h[0] for h in hs]
        logits = logits[0]
    return EncoderActivations(hs, logits, lengths,
                              {"ids": ids, "blocks": caches, "single": single})


def backward(acts: EncoderActivations, upstream_grad, params, config: EncoderConfig):
    """Gradients of ``sum(upstream_grad * logits)``.

    Returns ``(param_grads, dh0)`` where ``dh0`` is the gradient with
    respect to the embedding output h^0.
    """
    c = acts._cache
    if c is None:
        raise ValueError("activations carry no forward cache")
    dy = np.asarray(upstream_grad, dtype=float)
    if c["single"]:
        dy = dy[None]
    ids = c["ids"]
    B, n = ids.shape
    if dy.shape != (B, n, config.tags):
        raise ValueError(f"upstream gradient shape {dy.shape} != {(B, n, config.tags)}")
    hL = acts.h[-1][None] if c["single"] else acts.h[-1]
    grads = {
        "output.weight": _matmul_grad(dy, hL),
        "output.bias": dy.reshape(-1, config.tags).sum(0),
    }
    dx = dy @ params["output.weight"]
    for l in range(config.layers, 0, -1):
        dx, g = _block_backward(dx, layer_params(params, l), config, c["blocks"][l - 1])
        for k, v in g.items():
            grads[f"layer{l}.{k}"] = v
    H = config.hidden
    dword_t = np.zeros((config.vocab_size, H))
    np.add.at(dword_t, ids.ravel(), dx.reshape(-1, H))
    grads["embed.word"] = dword_t.T
    dpos = np.zeros((H, config.max_positions))
    dpos[:, :n] = dx.sum(0).T
    grads["embed.position"] = dpos
    return grads, (dx[0] if c["single"] else dx)
