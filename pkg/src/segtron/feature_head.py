"""Frozen-encoder features: layer combination and a two-layer BiLSTM tagger."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .encoder import EncoderActivations
from .tagging import NUM_TAGS


class CombinationStrategy(str, Enum):
    FirstLayer = "FirstLayer"
    SecondToLastHidden = "SecondToLastHidden"
    LastHidden = "LastHidden"
    SumLastFour = "SumLastFour"
    ConcatLastFour = "ConcatLastFour"
    SumAll = "SumAll"

    @classmethod
    def parse(cls, name: str) -> "CombinationStrategy":
        key = name.strip()
        if key in cls.__members__:
            return cls[key]
        try:
            return _ALIASES[key.lower()]
        except KeyError:
            choices = ", ".join(list(cls.__members__) + list(_ALIASES))
            raise ValueError(f"unknown combination strategy {name!r}; expected one of {choices}")

    @property
    def alias(self) -> str:
        return {v: k for k, v in _ALIASES.items()}[self]


_ALIASES = {
    "first": CombinationStrategy.FirstLayer,
    "second-to-last": CombinationStrategy.SecondToLastHidden,
    "last": CombinationStrategy.LastHidden,
    "sum4": CombinationStrategy.SumLastFour,
    "concat4": CombinationStrategy.ConcatLastFour,
    "sumall": CombinationStrategy.SumAll,
}


def feature_width(strategy: CombinationStrategy, hidden: int) -> int:
    return 4 * hidden if strategy is CombinationStrategy.ConcatLastFour else hidden


def check_strategy(strategy: CombinationStrategy, layers: int) -> None:
    need = {
        CombinationStrategy.SecondToLastHidden: 2,
        CombinationStrategy.SumLastFour: 4,
        CombinationStrategy.ConcatLastFour: 4,
    }.get(strategy, 1)
    if layers < need:
        raise ValueError(f"{strategy.value} needs at least {need} layers, encoder has {layers}")


def combine_layers(acts: EncoderActivations | list, strategy: CombinationStrategy) -> np.ndarray:
    """Combine h^0..h^L into one feature matrix (last axis H, or 4H for concat)."""
    h = acts.h if isinstance(acts, EncoderActivations) else list(acts)
    L = len(h) - 1
    strategy = CombinationStrategy(strategy)
    check_strategy(strategy, L)
    if strategy is CombinationStrategy.FirstLayer:
        return h[0]
    if strategy is CombinationStrategy.LastHidden:
        return h[L]
    if strategy is CombinationStrategy.SecondToLastHidden:
        return h[L - 1]
    if strategy is CombinationStrategy.SumLastFour:
        return h[L - 3] + h[L - 2] + h[L - 1] + h[L]
    if strategy is CombinationStrategy.ConcatLastFour:
        return np.concatenate(h[L - 3:], axis=-1)
    return np.sum(h[1:], axis=0)


# -- BiLSTM -----------------------------------------------------------------

LSTM_LAYERS = 2
DIRECTIONS = ("fwd", "bwd")


def bilstm_shapes(input_width: int, hidden: int, tags: int = NUM_TAGS) -> dict[str, tuple]:
    shapes = {}
    d_in = input_width
    for layer in range(1, LSTM_LAYERS + 1):
        for direction in DIRECTIONS:
            p = f"lstm{layer}.{direction}."
            shapes[p + "w_in"] = (4 * hidden, d_in)
            shapes[p + "w_rec"] = (4 * hidden, hidden)
            shapes[p + "bias"] = (4 * hidden,)
        d_in = 2 * hidden
    shapes["proj.weight"] = (tags, 2 * hidden)
    shapes["proj.bias"] = (tags,)
    return shapes


def init_bilstm(input_width: int, hidden: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform(+-1/sqrt(hidden)) weights, forget-gate bias 1, zero output bias."""
    bound = 1.0 / np.sqrt(hidden)
    params = {}
    for name, shape in bilstm_shapes(input_width, hidden).items():
        if name == "proj.bias":
            params[name] = np.zeros(shape)
        elif name.endswith(".bias"):
            b = np.zeros(shape)
            b[hidden:2 * hidden] = 1.0  # gate order i, f, g, o
            params[name] = b
        else:
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def lstm_hidden_size(params) -> int:
    return params["lstm1.fwd.w_rec"].shape[1]


def lstm_input_width(params) -> int:
    return params["lstm1.fwd.w_in"].shape[1]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _reverse_index(n, lengths):
    # reverses each sequence within its length; padding stays in place
    t = np.arange(n)[None, :]
    L = np.asarray(lengths)[:, None]
    return np.where(t < L, L - 1 - t, t)


def _gather(x, idx):
    return np.take_along_axis(x, idx[..., None], axis=1)


def _lstm_forward(x, w_in, w_rec, bias):
    B, n, _ = x.shape
    D = w_rec.shape[1]
    xin = x @ w_in.T + bias
    h = np.zeros((B, D))
    c = np.zeros((B, D))
    hs = np.empty((B, n, D))
    steps = []
    for t in range(n):
        z = xin[:, t] + h @ w_rec.T
        i = _sigmoid(z[:, :D])
        f = _sigmoid(z[:, D:2 * D])
        g = np.tanh(z[:, 2 * D:3 * D])
        o = _sigmoid(z[:, 3 * D:])
        c_prev = c
        c = f * c + i * g
        tc = np.tanh(c)
        h_prev = h
        h = o * tc
        hs[:, t] = h
        steps.append((i, f, g, o, c_prev, tc, h_prev))
    return hs, steps


def _lstm_backward(dhs, x, w_in, w_rec, steps):
    B, n, D = dhs.shape
    dz_all = np.empty((B, n, 4 * D))
    dh_next = np.zeros((B, D))
    dc_next = np.zeros((B, D))
    dw_rec = np.zeros_like(w_rec)
    for t in range(n - 1, -1, -1):
        i, f, g, o, c_prev, tc, h_prev = steps[t]
        dh = dhs[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_next = dc * f
        dz = np.concatenate([di * i * (1 - i), df * f * (1 - f),
                             dg * (1 - g * g), do * o * (1 - o)], axis=1)
        dz_all[:, t] = dz
        dw_rec += dz.T @ h_prev
        dh_next = dz @ w_rec
    dw_in = dz_all.reshape(-1, 4 * D).T @ x.reshape(-1, x.shape[-1])
    dbias = dz_all.reshape(-1, 4 * D).sum(0)
    dx = dz_all @ w_in
    return dx, dw_in, dw_rec, dbias


def bilstm_forward_batch(features, params, lengths):
    """Logits (B, n, T) and a cache for :func:`bilstm_backward_batch`."""
    x = np.asarray(features, dtype=float)
    if x.shape[-1] != lstm_input_width(params):
        raise ValueError(f"feature width {x.shape[-1]} != BiLSTM input width "
                         f"{lstm_input_width(params)}")
    B, n, _ = x.shape
    rev = _reverse_index(n, lengths)
    cache = {"rev": rev, "layers": []}
    for layer in range(1, LSTM_LAYERS + 1):
        p = f"lstm{layer}."
        hf, sf = _lstm_forward(x, params[p + "fwd.w_in"], params[p + "fwd.w_rec"],
                               params[p + "fwd.bias"])
        xr = _gather(x, rev)
        hb_r, sb = _lstm_forward(xr, params[p + "bwd.w_in"], params[p + "bwd.w_rec"],
                                 params[p + "bwd.bias"])
        hb = _gather(hb_r, rev)
        cache["layers"].append((x, xr, sf, sb))
        x = np.concatenate([hf, hb], axis=-1)
    cache["top"] = x
    logits = x @ params["proj.weight"].T + params["proj.bias"]
    return logits, cache


def bilstm_backward_batch(dlogits, params, cache):
    """Parameter gradients and the gradient w.r.t. the input features."""
    top = cache["top"]
    rev = cache["rev"]
    grads = {
        "proj.weight": dlogits.reshape(-1, dlogits.shape[-1]).T @ top.reshape(-1, top.shape[-1]),
        "proj.bias": dlogits.reshape(-1, dlogits.shape[-1]).sum(0),
    }
    dx = dlogits @ params["proj.weight"]
    for layer in range(LSTM_LAYERS, 0, -1):
        p = f"lstm{layer}."
        x, xr, sf, sb = cache["layers"][layer - 1]
        D = params[p + "fwd.w_rec"].shape[1]
        dhf, dhb = dx[..., :D], dx[..., D:]
        dxf, grads[p + "fwd.w_in"], grads[p + "fwd.w_rec"], grads[p + "fwd.bias"] = \
            _lstm_backward(dhf, x, params[p + "fwd.w_in"], params[p + "fwd.w_rec"], sf)
        dxr, grads[p + "bwd.w_in"], grads[p + "bwd.w_rec"], grads[p + "bwd.bias"] = \
            _lstm_backward(_gather(dhb, rev), xr, params[p + "bwd.w_in"],
                           params[p + "bwd.w_rec"], sb)
        dx = dxf + _gather(dxr, rev)
    return grads, dx


def bilstm_forward(features, params) -> np.ndarray:
    """Logits (n, T) for a single feature matrix (n, d)."""
    x = np.asarray(features, dtype=float)
    logits, _ = bilstm_forward_batch(x[None], params, [x.shape[0]])
    return logits[0]
