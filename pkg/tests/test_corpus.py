import io
import logging

import numpy as np
import pytest

from segtron import checkpoint as ckpt
from segtron.corpus import (CorpusError, SyntheticSpec, _segmentations, generate_synthetic,
                            load_raw, load_segmented, parse_segmented_line, write_segmented)
from segtron.encoder import EncoderConfig
from segtron.model import Segmenter
from segtron.tagging import Segmentation, Tag, align_tags
from segtron.training import TrainConfig, train
from segtron.vocab import vocabulary_from_texts


def test_parse_double_spaces():
    assert parse_segmented_line("共同  创造  美好").words == ("共同", "创造", "美好")


def test_ideographic_spaces_parse_like_ascii():
    assert parse_segmented_line("共同　创造　　美好") == \
        parse_segmented_line("共同 创造 美好")


def test_load_skips_blank_lines(tmp_path, caplog):
    path = tmp_path / "c.seg"
    path.write_text("﻿共同 创造\n\n 　 \n美好\n", encoding="utf-8")
    with caplog.at_level(logging.WARNING):
        corpus = load_segmented(path)
    assert [s.words for s in corpus] == [("共同", "创造"), ("美好",)]
    assert corpus.skipped_lines == 1
    assert "skipped 1" in caplog.text


def test_undecodable_bytes(tmp_path):
    path = tmp_path / "bad.seg"
    path.write_bytes(b"\xff\xfe\xfa abc\n")
    with pytest.raises(CorpusError, match="UTF-8"):
        load_segmented(path)


def test_write_then_load_is_identity(tmp_path):
    train_c, _ = generate_synthetic(SyntheticSpec(train_sentences=50))
    path = tmp_path / "out.seg"
    write_segmented(train_c, path)
    assert list(load_segmented(path)) == list(train_c)


def test_load_raw(tmp_path):
    path = tmp_path / "r.txt"
    path.write_text("共同创造\n\n美好\n", encoding="utf-8")
    assert load_raw(path) == ["共同创造", "", "美好"]


# -- synthetic --------------------------------------------------------------

def test_synthetic_is_deterministic(tmp_path):
    for run in range(2):
        tr, te = generate_synthetic(SyntheticSpec(train_sentences=100, seed=7))
        write_segmented(tr, tmp_path / f"tr{run}")
        write_segmented(te, tmp_path / f"te{run}")
    assert (tmp_path / "tr0").read_bytes() == (tmp_path / "tr1").read_bytes()
    assert (tmp_path / "te0").read_bytes() == (tmp_path / "te1").read_bytes()
    other, _ = generate_synthetic(SyntheticSpec(train_sentences=100, seed=8))
    assert list(other) != list(tr)


def test_default_spec_sizes():
    tr, te = generate_synthetic()
    assert len(tr) == 2000 and len(te) == 222
    chars = {c for s in list(tr) + list(te) for c in s.text}
    assert len(chars) <= 50
    assert all("一" <= c <= "鿿" for c in chars)
    assert len({w for s in tr for w in s.words}) <= 200


def test_synthetic_sentences_are_unambiguous():
    tr, te = generate_synthetic(SyntheticSpec(train_sentences=300))
    lex = {w for s in list(tr) + list(te) for w in s.words}
    for s in list(tr) + list(te):
        assert _segmentations(s.text, lex, 4) == 1


def test_single_char_lexicon_gives_all_s():
    spec = SyntheticSpec(alphabet_size=1, lexicon_size=1, word_lengths=(1,),
                         length_weights=(1.0,), train_sentences=20)
    tr, _ = generate_synthetic(spec)
    vocab = vocabulary_from_texts(tr.texts())
    for s in tr:
        assert set(align_tags(s, vocab).tags[1:-1]) == {Tag.S}


def test_alphabet_too_small():
    with pytest.raises(CorpusError, match="alphabet"):
        generate_synthetic(SyntheticSpec(alphabet_size=2, lexicon_size=200))


# -- checkpoints ------------------------------------------------------------

@pytest.fixture(scope="module")
def toy():
    tr, _ = generate_synthetic(SyntheticSpec(train_sentences=12, seed=1))
    vocab = vocabulary_from_texts(tr.texts())
    model = Segmenter.create(vocab, head="crf", layers=2, hidden=16, heads=2, max_len=64, seed=3)
    train(list(tr), model, TrainConfig(learning_rate=1e-3, batch_size=4, max_epochs=1))
    return model


def test_round_trip_is_bitwise(toy, tmp_path):
    path = tmp_path / "m.ckpt"
    ckpt.save_checkpoint(toy, path)
    back = ckpt.load_checkpoint(path)
    assert back.config == toy.config and back.vocab == toy.vocab
    assert back.head == toy.head and back.mode == toy.mode and back.epochs_done == 1
    a, b = ckpt.model_tensors(toy), ckpt.model_tensors(back)
    assert a.keys() == b.keys()
    for k in a:
        assert a[k].tobytes() == b[k].tobytes(), k
    assert back.optimizer.step == toy.optimizer.step
    assert ckpt.to_bytes(back) == ckpt.to_bytes(toy)


def test_feature_model_round_trip():
    tr, _ = generate_synthetic(SyntheticSpec(train_sentences=5, seed=2))
    vocab = vocabulary_from_texts(tr.texts())
    model = Segmenter.create(vocab, head="softmax", mode="feature", strategy="concat4", layers=4,
                             hidden=8, heads=2, max_len=32, lstm_hidden=5)
    back = ckpt.from_bytes(ckpt.to_bytes(model))
    assert back.strategy is model.strategy
    assert ckpt.params_digest(back.lstm) == ckpt.params_digest(model.lstm)


def test_truncated_file_rejected(toy):
    data = ckpt.to_bytes(toy)
    for cut in (0, 3, 10, 20, len(data) // 2, len(data) - 1):
        with pytest.raises(ckpt.CheckpointError):
            ckpt.from_bytes(data[:cut])
    with pytest.raises(ckpt.TruncatedCheckpoint):
        ckpt.from_bytes(data[:-1])


def test_trailing_garbage_rejected(toy):
    with pytest.raises(ckpt.CheckpointError, match="trailing"):
        ckpt.from_bytes(ckpt.to_bytes(toy) + b"\0")


def test_version_mismatch(toy):
    data = bytearray(ckpt.to_bytes(toy))
    data[len(ckpt.MAGIC)] = 99
    with pytest.raises(ckpt.CheckpointError, match="version"):
        ckpt.from_bytes(bytes(data))


def test_wrong_magic():
    with pytest.raises(ckpt.CheckpointError, match="not a segtron"):
        ckpt.from_bytes(b"PK\x03\x04" + b"\0" * 40)


def test_layer_count_mismatch(toy):
    expected = EncoderConfig(**{**toy.config.to_dict(), "layers": 3})
    with pytest.raises(ckpt.DimensionMismatch, match="layers"):
        ckpt.from_bytes(ckpt.to_bytes(toy), expected=expected)


def test_tensor_shape_mismatch(toy):
    header = ckpt.model_header(toy)
    tensors = ckpt.model_tensors(toy)
    tensors["encoder.embed.position"] = tensors["encoder.embed.position"][:, :5]
    buf = io.BytesIO()
    ckpt.write_container(buf, header, tensors)
    with pytest.raises(ckpt.DimensionMismatch, match="embed.position"):
        ckpt.from_bytes(buf.getvalue())


def test_params_digest_tracks_values():
    a = {"x": np.zeros(3)}
    b = {"x": np.array([0.0, 0.0, 1e-300])}
    assert ckpt.params_digest(a) != ckpt.params_digest(b)
    assert ckpt.params_digest(a) == ckpt.params_digest({"x": np.zeros(3)})
