"""Ready-made finite-difference checks for every hand-written backward pass."""

from __future__ import annotations

import numpy as np

from . import encoder as enc
from .feature_head import bilstm_backward_batch, bilstm_forward_batch, init_bilstm
from .heads import NEG, crf_loss, softmax_loss
from .tagging import Tag, word_tags
from .training import GradCheckReport, grad_check

DEFAULTS = {
    "seed": 0, "tolerance": 1e-4,
    "softmax_len": 6, "crf_len": 6,
    "hidden": 8, "layers": 1, "heads": 2, "ffn": 16, "vocab_size": 11, "seq_len": 3,
    "lstm_input": 8, "lstm_hidden": 6, "lstm_len": 4,
}


def random_gold(rng: np.random.Generator, n: int) -> list[int]:
    """A valid START, B/M/E/S..., END tag string of length ``n``."""
    tags = []
    while len(tags) < n - 2:
        k = int(rng.integers(1, min(4, n - 2 - len(tags)) + 1))
        tags.extend(word_tags(k))
    return [int(Tag.START)] + [int(t) for t in tags] + [int(Tag.END)]


def random_transitions(rng: np.random.Generator) -> np.ndarray:
    t = rng.normal(size=(6, 6))
    t[:, Tag.START] = NEG
    t[Tag.END, :] = NEG
    return t


def check_softmax(rng, n=6, tolerance=1e-4) -> GradCheckReport:
    params = {"emissions": rng.normal(size=(n, 6))}
    gold = random_gold(rng, n)

    def fn(p):
        loss, g = softmax_loss(p["emissions"], gold)
        return loss, {"emissions": g}
    return grad_check(fn, params, tolerance)


def check_crf(rng, n=6, tolerance=1e-4) -> GradCheckReport:
    params = {"emissions": rng.normal(size=(n, 6)), "transitions": random_transitions(rng)}
    gold = random_gold(rng, n)

    def fn(p):
        loss, de, dt = crf_loss(p["emissions"], p["transitions"], gold)
        return loss, {"emissions": de, "transitions": dt}
    return grad_check(fn, params, tolerance)


def _probe(rng, shape):
    return rng.normal(size=shape)


def check_encoder(rng, hidden=8, layers=1, heads=2, ffn=16, vocab_size=11, seq_len=3,
                  tolerance=1e-4) -> GradCheckReport:
    """Random linear functional of the logits, dropout off.

    At the default init the attention scores are nearly constant, so the
    query/key gradients sit around 1e-9, below the error floor, where the
    central difference is all round-off. Perturbing every weight by roughly
    1/sqrt(hidden) makes attention non-uniform without saturating GELU.
    """
    config = enc.EncoderConfig(vocab_size=vocab_size, layers=layers, hidden=hidden, heads=heads,
                               ffn=ffn, max_positions=max(seq_len, 4), dropout=0.0)
    params = {k: v + rng.normal(scale=0.3, size=v.shape)
              for k, v in enc.init_params(config, rng).items()}
    ids = rng.integers(0, vocab_size, size=seq_len)
    probe = _probe(rng, (seq_len, config.tags))

    def fn(p):
        acts = enc.forward(ids, p, config)
        grads, _ = enc.backward(acts, probe, p, config)
        return float((probe * acts.logits).sum()), grads
    return grad_check(fn, params, tolerance)


def check_bilstm(rng, lstm_input=8, lstm_hidden=6, lstm_len=4, tolerance=1e-4) -> GradCheckReport:
    """Both stacked layers and the input features under a linear probe."""
    params = init_bilstm(lstm_input, lstm_hidden, rng)
    params["features"] = rng.normal(size=(lstm_len, lstm_input))
    probe = _probe(rng, (lstm_len, len(Tag)))

    def fn(p):
        lstm = {k: v for k, v in p.items() if k != "features"}
        y, cache = bilstm_forward_batch(p["features"][None], lstm, [lstm_len])
        grads, dx = bilstm_backward_batch(probe[None], lstm, cache)
        grads["features"] = dx[0]
        return float((probe * y[0]).sum()), grads
    return grad_check(fn, params, tolerance)


def run_all(values: dict | None = None) -> dict[str, GradCheckReport]:
    """Run every check; ``values`` overrides :data:`DEFAULTS` (strings accepted)."""
    cfg = dict(DEFAULTS)
    for k, v in (values or {}).items():
        if k not in cfg:
            raise KeyError(f"unknown gradcheck key {k!r}")
        cfg[k] = type(DEFAULTS[k])(float(v)) if isinstance(DEFAULTS[k], int) else float(v)
    rng = np.random.default_rng(cfg["seed"])
    tol = cfg["tolerance"]
    return {
        "softmax_loss": check_softmax(rng, cfg["softmax_len"], tol),
        "crf_loss": check_crf(rng, cfg["crf_len"], tol),
        "encoder": check_encoder(rng, cfg["hidden"], cfg["layers"], cfg["heads"], cfg["ffn"],
                                 cfg["vocab_size"], cfg["seq_len"], tol),
        "bilstm": check_bilstm(rng, cfg["lstm_input"], cfg["lstm_hidden"], cfg["lstm_len"], tol),
    }
