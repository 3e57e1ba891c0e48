import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from segtron.heads import (NEG, TagError, crf_decode, crf_log_partition, crf_loss, crf_marginals,
                           init_transitions, path_score, softmax_decode, softmax_loss)
from segtron.tagging import Tag, validate_tag_string
from segtron.training import grad_check

B, M, E, S, START, END = (int(t) for t in Tag)


def all_paths(n):
    for mid in itertools.product([B, M, E, S], repeat=n - 2):
        yield [START, *mid, END]


def brute_log_z(em, trans):
    scores = [path_score(em, trans, p) for p in all_paths(em.shape[0])]
    m = max(scores)
    return m + math.log(sum(math.exp(s - m) for s in scores))


def random_transitions(rng):
    t = rng.normal(size=(6, 6))
    t[:, START] = NEG
    t[END, :] = NEG
    return t


def grammar_transitions():
    """Transitions that forbid every BMES grammar violation."""
    t = init_transitions()
    for a, c in [(START, M), (START, E), (B, B), (B, S), (B, END), (M, B), (M, S), (M, END),
                 (E, M), (E, E), (S, M), (S, E)]:
        t[a, c] = NEG
    return t


# -- softmax ----------------------------------------------------------------

def test_softmax_uniform_loss_is_log6():
    loss, _ = softmax_loss(np.zeros((5, 6)), [START, B, E, S, END])
    assert loss == pytest.approx(math.log(6), abs=1e-12)


def test_softmax_confident_loss_vanishes():
    em = np.zeros((4, 6))
    em[1, B] = em[2, E] = 50.0
    loss, grad = softmax_loss(em, [START, B, E, END])
    assert loss < 1e-20
    assert np.abs(grad).max() < 1e-20


def test_softmax_gradient_fd():
    rng = np.random.default_rng(0)
    gold = [START, B, M, E, S, END]

    def fn(p):
        loss, grad = softmax_loss(p["e"], gold)
        return loss, {"e": grad}
    report = grad_check(fn, {"e": rng.normal(size=(6, 6))})
    assert report.max_error <= 1e-6


def test_softmax_ignores_marker_emissions():
    rng = np.random.default_rng(1)
    em = rng.normal(size=(5, 6))
    gold = [START, B, E, S, END]
    loss, grad = softmax_loss(em, gold)
    em2 = em.copy()
    em2[[0, -1]] += 100
    assert softmax_loss(em2, gold)[0] == loss
    assert np.all(grad[[0, -1]] == 0)


def test_softmax_decode_ties_go_to_b():
    assert softmax_decode(np.zeros((4, 6))) == [START, B, B, END]


def test_softmax_decode_never_picks_markers():
    em = np.zeros((3, 6))
    em[1, START] = em[1, END] = 10
    em[1, S] = 1
    assert softmax_decode(em) == [START, S, END]


# -- CRF --------------------------------------------------------------------

def test_log_z_uniform_is_count_of_paths():
    assert crf_log_partition(np.zeros((5, 6)), init_transitions()) == \
        pytest.approx(3 * math.log(4), abs=1e-12)


def test_log_z_empty_interior_is_single_transition():
    t = init_transitions()
    t[START, END] = 0.7
    assert crf_log_partition(np.zeros((2, 6)), t) == pytest.approx(0.7)


def test_crf_uniform_loss():
    loss, _, _ = crf_loss(np.zeros((5, 6)), init_transitions(), [START, B, E, S, END])
    assert loss == pytest.approx(3 * math.log(4), abs=1e-12)


def test_crf_loss_zero_when_only_gold_is_admissible():
    t = init_transitions()
    em = np.full((4, 6), NEG)
    em[1, B] = em[2, E] = 0.0
    loss, _, _ = crf_loss(em, t, [START, B, E, END])
    assert loss == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_log_z_matches_enumeration(n):
    rng = np.random.default_rng(n)
    em, t = rng.normal(size=(n, 6)), random_transitions(rng)
    assert crf_log_partition(em, t) == pytest.approx(brute_log_z(em, t), abs=1e-10)


@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_viterbi_matches_enumeration(n):
    rng = np.random.default_rng(10 + n)
    em, t = rng.normal(size=(n, 6)), random_transitions(rng)
    best = max(all_paths(n), key=lambda p: path_score(em, t, p))
    assert crf_decode(em, t) == best


def test_crf_gradient_fd():
    rng = np.random.default_rng(2)
    gold = [START, B, M, E, S, END]

    def fn(p):
        loss, de, dt = crf_loss(p["e"], p["t"], gold)
        return loss, {"e": de, "t": dt}
    report = grad_check(fn, {"e": rng.normal(size=(6, 6)), "t": random_transitions(rng)})
    assert report.max_error <= 1e-6, report.to_text()


def test_crf_gradient_is_marginals_minus_gold():
    rng = np.random.default_rng(3)
    em, t = rng.normal(size=(5, 6)), random_transitions(rng)
    gold = [START, S, B, E, END]
    _, de, _ = crf_loss(em, t, gold)
    marg = crf_marginals(em, t)
    expect = np.zeros((5, 6))
    expect[1:-1, :4] = marg
    for i, g in enumerate(gold[1:-1], start=1):
        expect[i, g] -= 1
    np.testing.assert_allclose(de, expect, atol=1e-12)


def test_crf_rejects_bad_gold():
    with pytest.raises(TagError):
        crf_loss(np.zeros((4, 6)), init_transitions(), [START, START, E, END])
    with pytest.raises(TagError):
        crf_loss(np.zeros((4, 6)), init_transitions(), [START, B, E])


def test_viterbi_ties_go_to_b():
    assert crf_decode(np.zeros((5, 6)), init_transitions()) == [START, B, B, B, END]


def test_grammar_transitions_force_valid_paths():
    rng = np.random.default_rng(4)
    t = grammar_transitions()
    for _ in range(50):
        em = rng.normal(scale=3, size=(int(rng.integers(2, 10)), 6))
        assert validate_tag_string(crf_decode(em, t))


def test_crf_with_constant_transitions_equals_softmax_decode():
    rng = np.random.default_rng(5)
    t = init_transitions()
    for _ in range(20):
        em = rng.normal(size=(7, 6))
        assert crf_decode(em, t) == softmax_decode(em)


# -- properties -------------------------------------------------------------

case = st.tuples(st.integers(3, 8), st.integers(0, 2**32 - 1))


@settings(max_examples=100, deadline=None)
@given(case)
def test_log_z_bounds_any_path(c):
    n, seed = c
    rng = np.random.default_rng(seed)
    em, t = rng.normal(size=(n, 6)), random_transitions(rng)
    z = crf_log_partition(em, t)
    path = [START] + list(rng.integers(0, 4, size=n - 2)) + [END]
    assert z >= path_score(em, t, path) - 1e-9


@settings(max_examples=100, deadline=None)
@given(case)
def test_marginals_are_distributions(c):
    n, seed = c
    rng = np.random.default_rng(seed)
    marg = crf_marginals(rng.normal(size=(n, 6)), random_transitions(rng))
    assert marg.shape == (n - 2, 4)
    np.testing.assert_allclose(marg.sum(-1), 1.0, atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(case, st.floats(-20, 20))
def test_constant_shift_changes_log_z_by_shift_times_length(c, shift):
    n, seed = c
    rng = np.random.default_rng(seed)
    em, t = rng.normal(size=(n, 6)), random_transitions(rng)
    shifted = em.copy()
    shifted[:, :4] += shift
    assert crf_log_partition(shifted, t) == pytest.approx(crf_log_partition(em, t)
                                                          + shift * (n - 2), abs=1e-8)
    assert crf_decode(shifted, t) == crf_decode(em, t)


@settings(max_examples=50, deadline=None)
@given(case)
def test_small_gradient_step_lowers_loss(c):
    n, seed = c
    rng = np.random.default_rng(seed)
    em, t = rng.normal(size=(n, 6)), random_transitions(rng)
    gold = [START] + [S] * (n - 2) + [END]
    loss, de, dt = crf_loss(em, t, gold)
    mask = np.ones_like(t)
    mask[:, START] = mask[END, :] = 0
    new, _, _ = crf_loss(em - 1e-3 * de, t - 1e-3 * dt * mask, gold)
    assert new < loss
