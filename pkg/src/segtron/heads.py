"""Softmax and linear-chain CRF classifiers over per-token tag scores.

Position 0 ([CLS]) is pinned to START and position n-1 ([SEP]) to END.
Only interior positions carry a tag from {B, M, E, S}; the emissions at the
two pinned positions never enter any score.

Batched variants take ``emissions`` of shape ``(B, n, 6)`` with ``lengths``;
the plain functions take a single ``(n, 6)`` matrix.
"""

from __future__ import annotations

import numpy as np

from .tagging import NUM_TAGS, Tag

NEG = -1e4  # stands in for -inf in score space
INTERIOR = np.array([Tag.B, Tag.M, Tag.E, Tag.S])
K = len(INTERIOR)
START, END = int(Tag.START), int(Tag.END)


class TagError(ValueError):
    pass


def init_transitions() -> np.ndarray:
    """Zeros, with transitions into START and out of END pinned to NEG."""
    t = np.zeros((NUM_TAGS, NUM_TAGS))
    t[:, START] = NEG
    t[END, :] = NEG
    return t


def transition_grad_mask() -> np.ndarray:
    m = np.ones((NUM_TAGS, NUM_TAGS))
    m[:, START] = 0.0
    m[END, :] = 0.0
    return m


def _logsumexp(x, axis):
    m = x.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def _check_gold(gold, n):
    if len(gold) != n:
        raise TagError(f"{len(gold)} gold tags for {n} positions")


# -- softmax ----------------------------------------------------------------

def softmax_loss_batch(emissions, gold, lengths):
    """Mean cross-entropy over all interior tokens of the batch."""
    B, n, T = emissions.shape
    pos = np.arange(n)[None, :]
    interior = (pos >= 1) & (pos < (np.asarray(lengths)[:, None] - 1))
    count = interior.sum()
    grad = np.zeros_like(emissions)
    if count == 0:
        return 0.0, grad
    z = emissions - emissions.max(-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(-1, keepdims=True))
    g = np.where(interior, gold, 0)
    picked = np.take_along_axis(logp, g[..., None], -1)[..., 0]
    loss = -(picked * interior).sum() / count
    probs = np.exp(logp)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, g[..., None], 1.0, -1)
    grad = (probs - onehot) * interior[..., None] / count
    return float(loss), grad


def softmax_loss(emissions, gold_tags):
    """Cross-entropy averaged over interior positions, with its gradient."""
    e = np.asarray(emissions, dtype=float)
    _check_gold(gold_tags, e.shape[0])
    loss, grad = softmax_loss_batch(e[None], np.asarray(gold_tags)[None], [e.shape[0]])
    return loss, grad[0]


def softmax_decode_batch(emissions, lengths):
    B, n, _ = emissions.shape
    best = INTERIOR[np.argmax(emissions[..., INTERIOR], axis=-1)]
    out = []
    for b, L in enumerate(lengths):
        tags = [START] + best[b, 1:L - 1].tolist() + [END]
        out.append(tags)
    return out


def softmax_decode(emissions) -> list[int]:
    """Per-position argmax over B/M/E/S; ties go to the lower tag id."""
    e = np.asarray(emissions, dtype=float)
    if e.shape[0] < 2:
        raise ValueError("need at least the two marker positions")
    return softmax_decode_batch(e[None], [e.shape[0]])[0]


# -- CRF --------------------------------------------------------------------

def _interior_emissions(emissions):
    return emissions[..., INTERIOR]


def _forward_alphas(em, trans, lengths):
    """alpha[b, i, y] for interior positions i = 1 .. len-2 (garbage past that)."""
    B, n, _ = em.shape
    tii = trans[np.ix_(INTERIOR, INTERIOR)]
    alpha = np.full((B, n, K), NEG)
    if n < 3:
        return alpha
    alpha[:, 1] = trans[START, INTERIOR] + em[:, 1]
    for i in range(2, n - 1):
        alpha[:, i] = _logsumexp(alpha[:, i - 1][:, :, None] + tii[None], axis=1) + em[:, i]
    return alpha


def _backward_betas(em, trans, lengths):
    B, n, _ = em.shape
    tii = trans[np.ix_(INTERIOR, INTERIOR)]
    beta = np.full((B, n, K), NEG)
    lengths = np.asarray(lengths)
    last = lengths - 2
    for i in range(n - 2, 0, -1):
        at_end = last == i
        nxt = np.full((B, K), NEG)
        if i + 1 < n - 1:
            nxt = _logsumexp(tii[None] + (em[:, i + 1] + beta[:, i + 1])[:, None, :], axis=2)
        beta[:, i] = np.where(at_end[:, None], trans[INTERIOR, END][None], nxt)
    return beta


def _log_partition(em, trans, lengths, alpha=None):
    lengths = np.asarray(lengths)
    if alpha is None:
        alpha = _forward_alphas(em, trans, lengths)
    B = em.shape[0]
    logz = np.empty(B)
    for b, L in enumerate(lengths):
        if L == 2:
            logz[b] = trans[START, END]
        else:
            logz[b] = _logsumexp(alpha[b, L - 2] + trans[INTERIOR, END], axis=0)
    return logz


def crf_log_partition(emissions, transitions) -> float:
    """log Z over all B/M/E/S paths pinned to START ... END (forward algorithm)."""
    e = np.asarray(emissions, dtype=float)
    if e.shape[0] < 2:
        raise ValueError("need at least the two marker positions")
    em = _interior_emissions(e)[None]
    return float(_log_partition(em, np.asarray(transitions, dtype=float), [e.shape[0]])[0])


def path_score(emissions, transitions, tags) -> float:
    """Score of one pinned path: interior emissions plus all transitions."""
    e = np.asarray(emissions, dtype=float)
    s = sum(e[i, tags[i]] for i in range(1, len(tags) - 1))
    s += sum(transitions[a, b] for a, b in zip(tags, tags[1:]))
    return float(s)


def crf_loss_batch(emissions, transitions, gold, lengths):
    """Sentence-averaged NLL with emission and transition gradients."""
    B, n, _ = emissions.shape
    lengths = np.asarray(lengths)
    em = _interior_emissions(emissions)
    alpha = _forward_alphas(em, transitions, lengths)
    beta = _backward_betas(em, transitions, lengths)
    logz = _log_partition(em, transitions, lengths, alpha)
    tii = transitions[np.ix_(INTERIOR, INTERIOR)]

    demit = np.zeros_like(emissions)
    dtrans = np.zeros_like(transitions)
    total = 0.0
    for b in range(B):
        L = int(lengths[b])
        tags = gold[b][:L]
        if tags[0] != START or tags[L - 1] != END or any(
                t not in (0, 1, 2, 3) for t in tags[1:L - 1]):
            raise TagError("gold tags must be START, B/M/E/S..., END")
        gold_score = path_score(emissions[b], transitions, tags)
        total += logz[b] - gold_score
        # gold indicators
        for i in range(1, L - 1):
            demit[b, i, tags[i]] -= 1.0
        for a, c in zip(tags[:L - 1], tags[1:L]):
            dtrans[a, c] -= 1.0
        if L == 2:
            dtrans[START, END] += 1.0
            continue
        marg = np.exp(alpha[b, 1:L - 1] + beta[b, 1:L - 1] - logz[b])
        demit[b, 1:L - 1][:, INTERIOR] += marg
        dtrans[START, INTERIOR] += marg[0]
        dtrans[INTERIOR, END] += marg[-1]
        if L > 3:
            pair = np.exp(alpha[b, 1:L - 2][:, :, None] + tii[None]
                          + (em[b, 2:L - 1] + beta[b, 2:L - 1])[:, None, :] - logz[b])
            dtrans[np.ix_(INTERIOR, INTERIOR)] += pair.sum(0)
    return total / B, demit / B, dtrans / B


def crf_loss(emissions, transitions, gold_tags):
    """NLL = log Z - score(gold); gradients are marginals minus gold indicators."""
    e = np.asarray(emissions, dtype=float)
    _check_gold(gold_tags, e.shape[0])
    loss, de, dt = crf_loss_batch(e[None], np.asarray(transitions, dtype=float),
                                  [list(gold_tags)], [e.shape[0]])
    return loss, de[0], dt


def crf_marginals(emissions, transitions) -> np.ndarray:
    """Per-position posterior over B/M/E/S, shape (n-2, 4)."""
    e = np.asarray(emissions, dtype=float)
    em = _interior_emissions(e)[None]
    L = e.shape[0]
    alpha = _forward_alphas(em, transitions, [L])
    beta = _backward_betas(em, transitions, [L])
    logz = _log_partition(em, transitions, [L], alpha)
    return np.exp(alpha[0, 1:L - 1] + beta[0, 1:L - 1] - logz[0])


def crf_decode_batch(emissions, transitions, lengths):
    B, n, _ = emissions.shape
    em = _interior_emissions(emissions)
    tii = transitions[np.ix_(INTERIOR, INTERIOR)]
    out = []
    if n >= 3:
        delta = np.empty((B, n, K))
        back = np.zeros((B, n, K), dtype=int)
        delta[:, 1] = transitions[START, INTERIOR] + em[:, 1]
        for i in range(2, n - 1):
            cand = delta[:, i - 1][:, :, None] + tii[None]
            back[:, i] = cand.argmax(axis=1)
            delta[:, i] = cand.max(axis=1) + em[:, i]
    for b, L in enumerate(lengths):
        L = int(L)
        if L == 2:
            out.append([START, END])
            continue
        y = int(np.argmax(delta[b, L - 2] + transitions[INTERIOR, END]))
        path = [y]
        for i in range(L - 2, 1, -1):
            y = int(back[b, i, y])
            path.append(y)
        path.reverse()
        out.append([START] + INTERIOR[path].tolist() + [END])
    return out


def crf_decode(emissions, transitions) -> list[int]:
    """Viterbi path with pinned endpoints; ties go to the lower tag id."""
    e = np.asarray(emissions, dtype=float)
    if e.shape[0] < 2:
        raise ValueError("need at least the two marker positions")
    return crf_decode_batch(e[None], np.asarray(transitions, dtype=float), [e.shape[0]])[0]
