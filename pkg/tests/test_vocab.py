import pytest
from hypothesis import given, settings, strategies as st

from segtron.vocab import (CONTINUATION_PREFIX, SPECIAL_TOKENS, VocabularyError, _chunks,
                           add_markers, build_vocabulary, detokenize_spans, is_cjk,
                           load_vocabulary, save_vocabulary, tokenize, tokenize_words)

BASE = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[unused1]"]


def names(ts, vocab):
    return [vocab.token(t.id) for t in ts.tokens]


@pytest.fixture
def example_vocab():
    return build_vocabulary(BASE + ["con", "##fl", "##ue", "##nce", "于", "2004", "年", "首",
                                    "发", "。", "c", "##o", "##n"])


def test_build_vocabulary_insertion_order():
    v = build_vocabulary(BASE + ["的"])
    assert len(v) == 6
    assert v.id_of["的"] == 5
    assert v.unk_id == 1 and v.space_id == 4


def test_duplicate_token_rejected():
    with pytest.raises(VocabularyError, match="duplicate"):
        build_vocabulary(BASE + ["的", "的"])


def test_missing_special_rejected():
    with pytest.raises(VocabularyError, match=r"\[UNK\]"):
        build_vocabulary([t for t in BASE if t != "[UNK]"] + ["的"])


def test_empty_token_rejected():
    with pytest.raises(VocabularyError, match="empty"):
        build_vocabulary(BASE + [""])


def test_vocab_file_round_trip(tmp_path):
    v = build_vocabulary(BASE + ["的", "##ab", "x"])
    save_vocabulary(v, tmp_path / "vocab.txt")
    assert (tmp_path / "vocab.txt").read_text(encoding="utf-8").splitlines()[5:] == \
        ["的", "##ab", "x"]
    assert load_vocabulary(tmp_path / "vocab.txt") == v


def test_confluence_wordpiece(example_vocab):
    ts = tokenize("Confluence", example_vocab, lowercase=True)
    assert names(ts, example_vocab) == ["con", "##fl", "##ue", "##nce"]
    assert ts.spans == [(0, 3), (3, 5), (5, 7), (7, 10)]
    assert not ts.has_unknown


def test_case_is_preserved_by_default(example_vocab):
    # "C" is not in the vocabulary, so the whole chunk degrades to [UNK]
    ts = tokenize("Confluence", example_vocab)
    assert names(ts, example_vocab) == ["[UNK]"]
    assert ts.spans == [(0, 10)]
    assert ts.has_unknown


def test_single_cjk_char(example_vocab):
    ts = tokenize("于", example_vocab)
    assert names(ts, example_vocab) == ["于"]
    assert ts.spans == [(0, 1)]


def test_unknown_cjk_char_is_unk(example_vocab):
    ts = tokenize("茌", example_vocab)
    assert names(ts, example_vocab) == ["[UNK]"]
    assert ts.spans == [(0, 1)]
    assert ts.has_unknown


def test_unknown_cjk_does_not_swallow_neighbours(example_vocab):
    ts = tokenize("于茌年", example_vocab)
    assert names(ts, example_vocab) == ["于", "[UNK]", "年"]


def test_fullwidth_digits_form_one_chunk():
    v = build_vocabulary(BASE + ["２４", "##２", "##４", "位"])
    ts = tokenize("２４２４位", v)
    assert names(ts, v) == ["２４", "##２", "##４", "位"]
    assert ts.spans == [(0, 2), (2, 3), (3, 4), (4, 5)]


def test_overlong_chunk_is_unk():
    v = build_vocabulary(BASE + ["a", "##a"])
    assert names(tokenize("a" * 100, v), v) == ["a"] + ["##a"] * 99
    assert names(tokenize("a" * 101, v), v) == ["[UNK]"]


def test_empty_text_rejected(example_vocab):
    with pytest.raises(ValueError):
        tokenize("   ", example_vocab)


def test_detokenize_spans(example_vocab):
    ts = tokenize("Confluence", example_vocab, lowercase=True)
    spans = detokenize_spans(ts)
    assert spans == [(0, 3), (3, 5), (5, 7), (7, 10)]
    # round trip: consecutive spans tile [0, 10)
    assert spans[0][0] == 0 and spans[-1][1] == 10
    assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))
    assert detokenize_spans(tokenize("于", example_vocab)) == [(0, 1)]


def test_space_inside_word_becomes_unused1():
    v = build_vocabulary(BASE + ["New", "York", "市"])
    ts, counts = tokenize_words(["New York", "市"], v)
    assert names(ts, v) == ["New", "[unused1]", "York", "市"]
    assert ts.spans == [(0, 3), (3, 3), (4, 8), (8, 9)]
    assert counts == [3, 1]
    # a whitespace run collapses to one marker
    ts, _ = tokenize_words(["New \t York"], v)
    assert names(ts, v) == ["New", "[unused1]", "York"]


def test_no_unused1_at_inference():
    v = build_vocabulary(BASE + ["New", "York"])
    assert names(tokenize("New York", v), v) == ["New", "York"]


def test_no_unused1_next_to_cjk():
    v = build_vocabulary(BASE + ["New", "市"])
    ts, _ = tokenize_words(["New 市"], v)
    assert names(ts, v) == ["New", "市"]


def test_markers_have_empty_spans(example_vocab):
    ts = add_markers(tokenize("于年", example_vocab), example_vocab)
    assert names(ts, example_vocab) == ["[CLS]", "于", "年", "[SEP]"]
    assert ts.spans[0] == (0, 0) and ts.spans[-1] == (2, 2)


def test_is_cjk():
    assert is_cjk("的") and is_cjk("。") and is_cjk("，") and is_cjk("㐀")
    assert not is_cjk("２") and not is_cjk("Ａ") and not is_cjk("a") and not is_cjk("　")


# -- properties -------------------------------------------------------------

PROP_VOCAB = build_vocabulary(
    list(SPECIAL_TOKENS)
    + ["的", "了", "是", "ab", "abc", "a", "b", "##b", "##c", "##bc", "1", "12", "##2", "##3"])
ALPHABET = "的了是不abcd123 \t"


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet=ALPHABET, min_size=1, max_size=30).filter(lambda s: s.strip()))
def test_tokenize_properties(text):
    ts = tokenize(text, PROP_VOCAB)
    spans = [s for s in ts.spans if s[1] > s[0]]
    # sorted, non-overlapping
    assert all(a[1] <= b[0] for a, b in zip(spans, spans[1:]))
    # coverage of exactly the non-whitespace characters
    covered = {i for s, e in spans for i in range(s, e)}
    assert covered == {i for i, ch in enumerate(text) if not ch.isspace()}
    # CJK isolation
    for i, ch in enumerate(text):
        if is_cjk(ch):
            assert (i, i + 1) in spans
    # determinism
    assert tokenize(text, PROP_VOCAB) == ts
    # longest match within each chunk
    chunks = list(_chunks(text))
    for tok in ts.tokens:
        if tok.id == PROP_VOCAB.unk_id:
            continue
        cs, ce = next((a, b) for a, b in chunks if a <= tok.start < b)
        for longer in range(tok.end + 1, ce + 1):
            piece = text[tok.start:longer]
            if tok.start > cs:
                piece = CONTINUATION_PREFIX + piece
            assert piece not in PROP_VOCAB
