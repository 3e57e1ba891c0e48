import numpy as np
import pytest

from segtron import encoder as enc
from segtron.checkpoint import params_digest
from segtron.feature_head import (CombinationStrategy as CS, bilstm_backward_batch,
                                  bilstm_forward, bilstm_forward_batch, bilstm_shapes,
                                  combine_layers, feature_width, init_bilstm)
from segtron.gradcheck import check_bilstm
from segtron.model import Segmenter, feature_pipeline, make_batch
from segtron.tagging import align_tags, Segmentation
from segtron.training import AdamState, TrainConfig, adam_step
from segtron.vocab import SPECIAL_TOKENS, build_vocabulary


def layers(count, n=3, hidden=4, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.normal(size=(n, hidden)) for _ in range(count + 1)]


def test_strategy_selection():
    h = layers(4)
    assert combine_layers(h, CS.FirstLayer) is h[0]
    assert combine_layers(h, CS.LastHidden) is h[4]
    assert combine_layers(h, CS.SecondToLastHidden) is h[3]
    np.testing.assert_allclose(combine_layers(h, CS.SumLastFour), h[1] + h[2] + h[3] + h[4])
    np.testing.assert_array_equal(combine_layers(h, CS.ConcatLastFour),
                                  np.concatenate(h[1:], axis=1))
    np.testing.assert_allclose(combine_layers(h, CS.SumAll), sum(h[1:]))


def test_sum_all_excludes_embeddings_at_twelve_layers():
    h = layers(12)
    np.testing.assert_allclose(combine_layers(h, CS.SumAll), sum(h[1:13]))


def test_identical_layers():
    x = np.arange(6.0).reshape(3, 2)
    h = [x] * 5
    np.testing.assert_allclose(combine_layers(h, CS.SumLastFour), 4 * x)
    assert combine_layers(h, CS.ConcatLastFour).shape == (3, 8)


def test_too_few_layers_for_strategy():
    with pytest.raises(ValueError, match="4 layers"):
        combine_layers(layers(3), CS.SumLastFour)
    with pytest.raises(ValueError):
        combine_layers(layers(1), CS.SecondToLastHidden)


def test_combination_is_linear():
    a, b = layers(4, seed=1), layers(4, seed=2)
    mixed = [2 * x + 3 * y for x, y in zip(a, b)]
    for s in CS:
        np.testing.assert_allclose(combine_layers(mixed, s),
                                   2 * combine_layers(a, s) + 3 * combine_layers(b, s))


def test_strategy_parsing():
    assert CS.parse("sum4") is CS.SumLastFour
    assert CS.parse("ConcatLastFour") is CS.ConcatLastFour
    assert CS.parse("second-to-last") is CS.SecondToLastHidden
    assert {s.alias for s in CS} == {"first", "second-to-last", "last", "sum4", "concat4",
                                    "sumall"}
    with pytest.raises(ValueError, match="sum4"):
        CS.parse("median")
    assert feature_width(CS.ConcatLastFour, 64) == 256


def test_zero_weight_bilstm_outputs_bias():
    params = {k: np.zeros(s) for k, s in bilstm_shapes(5, 3).items()}
    params["proj.bias"] = np.arange(6.0)
    out = bilstm_forward(np.random.default_rng(0).normal(size=(4, 5)), params)
    np.testing.assert_array_equal(out, np.tile(np.arange(6.0), (4, 1)))


def test_single_token_bilstm_is_finite():
    params = init_bilstm(5, 3, np.random.default_rng(0))
    out = bilstm_forward(np.ones((1, 5)), params)
    assert out.shape == (1, 6) and np.isfinite(out).all()


def test_init_forget_bias():
    params = init_bilstm(5, 3, np.random.default_rng(0))
    np.testing.assert_array_equal(params["lstm1.fwd.bias"], [0, 0, 0, 1, 1, 1] + [0] * 6)
    assert np.abs(params["lstm2.bwd.w_in"]).max() <= 1 / np.sqrt(3)


def test_width_mismatch_rejected():
    with pytest.raises(ValueError, match="width"):
        bilstm_forward(np.ones((3, 4)), init_bilstm(5, 3, np.random.default_rng(0)))


def test_bilstm_gradients_fd():
    report = check_bilstm(np.random.default_rng(3))
    assert report.max_error < 1e-5, report.to_text()


def test_padded_batch_matches_single():
    rng = np.random.default_rng(4)
    params = init_bilstm(5, 3, rng)
    xs = [rng.normal(size=(n, 5)) for n in (4, 2, 3)]
    batch = np.zeros((3, 4, 5))
    for i, x in enumerate(xs):
        batch[i, :len(x)] = x
    logits, cache = bilstm_forward_batch(batch, params, [4, 2, 3])
    up = np.zeros((3, 4, 6))
    total = {k: np.zeros_like(v) for k, v in params.items()}
    for i, x in enumerate(xs):
        single, c1 = bilstm_forward_batch(x[None], params, [len(x)])
        np.testing.assert_allclose(logits[i, :len(x)], single[0], atol=1e-12)
        probe = rng.normal(size=(1, len(x), 6))
        up[i, :len(x)] = probe[0]
        g, _ = bilstm_backward_batch(probe, params, c1)
        for k in total:
            total[k] += g[k]
    gb, _ = bilstm_backward_batch(up, params, cache)
    for k in total:
        np.testing.assert_allclose(gb[k], total[k], atol=1e-10)


@pytest.fixture
def tiny():
    chars = "的了是不在有人这"
    vocab = build_vocabulary(list(SPECIAL_TOKENS) + list(chars))
    return vocab, [Segmentation(["的了", "是", "不在有"]), Segmentation(["人", "这的"])]


def test_last_hidden_pipeline_is_definitional(tiny):
    vocab, _ = tiny
    model = Segmenter.create(vocab, head="softmax", mode="feature", strategy="last", layers=2,
                             hidden=8, heads=2, max_len=16, lstm_hidden=4, seed=1)
    tags = feature_pipeline("的了是", model.encoder, model.config, CS.LastHidden, model.lstm,
                            "softmax", vocab)
    acts = enc.forward(np.array([vocab.cls_id] + [vocab.id_of[c] for c in "的了是"]
                                + [vocab.sep_id]), model.encoder, model.config)
    logits = bilstm_forward(acts.h[-1], model.lstm)
    expect = [4] + [int(np.argmax(row[:4])) for row in logits[1:-1]] + [5]
    assert tags == expect


def test_feature_mode_never_touches_encoder(tiny):
    vocab, corpus = tiny
    model = Segmenter.create(vocab, head="crf", mode="feature", strategy="sumall", layers=2,
                             hidden=8, heads=2, max_len=16, lstm_hidden=4, seed=2)
    before = params_digest(model.encoder)
    lstm_before = params_digest(model.lstm)
    examples = [align_tags(s, vocab) for s in corpus]
    batch = make_batch([e.tokenized for e in examples], vocab.pad_id, [e.tags for e in examples])
    loss, grads = model.loss_and_grads(batch)
    assert not any(k.startswith("encoder.") for k in grads)
    state = AdamState()
    adam_step(model.trainable(), grads, state, TrainConfig(learning_rate=1e-2))
    assert params_digest(model.encoder) == before
    assert params_digest(model.lstm) != lstm_before
