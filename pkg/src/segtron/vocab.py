"""Vocabulary handling and WordPiece tokenization with character-span provenance."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

PAD = "[PAD]"
UNK = "[UNK]"
CLS = "[CLS]"
SEP = "[SEP]"
SPACE = "[unused1]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, SPACE)

CONTINUATION_PREFIX = "##"
MAX_CHUNK_CHARS = 100


class VocabularyError(ValueError):
    pass


def is_cjk(ch: str) -> bool:
    """True for characters isolated as single-character chunks.

    Covers CJK Unified Ideographs (+ Extension A), the CJK Symbols and
    Punctuation block, and the non-alphanumeric half/full-width forms.
    Full-width digits and Latin letters are deliberately excluded so that
    e.g. ``２４`` stays one chunk.
    """
    cp = ord(ch)
    if 0x4E00 <= cp <= 0x9FFF or 0x3400 <= cp <= 0x4DBF:
        return True
    if 0x3000 <= cp <= 0x303F:
        return not ch.isspace()
    if 0xFF00 <= cp <= 0xFFEF:
        return not ch.isalnum()
    return False


@dataclass(frozen=True, eq=False)
class Vocabulary:
    entries: tuple[str, ...]
    id_of: Mapping[str, int] = field(repr=False)
    continuation_prefix: str = CONTINUATION_PREFIX

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, token: str) -> bool:
        return token in self.id_of

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return self.entries == other.entries

    def __hash__(self) -> int:
        return hash(self.entries)

    @property
    def pad_id(self) -> int:
        return self.id_of[PAD]

    @property
    def unk_id(self) -> int:
        return self.id_of[UNK]

    @property
    def cls_id(self) -> int:
        return self.id_of[CLS]

    @property
    def sep_id(self) -> int:
        return self.id_of[SEP]

    @property
    def space_id(self) -> int:
        return self.id_of[SPACE]

    def token(self, token_id: int) -> str:
        return self.entries[token_id]


def build_vocabulary(token_list: Iterable[str]) -> Vocabulary:
    """Build a vocabulary whose ids follow insertion order."""
    entries = tuple(token_list)
    id_of: dict[str, int] = {}
    for i, tok in enumerate(entries):
        if tok == "":
            raise VocabularyError(f"empty token at id {i}")
        if tok in id_of:
            raise VocabularyError(f"duplicate token {tok!r} at ids {id_of[tok]} and {i}")
        id_of[tok] = i
    missing = [t for t in SPECIAL_TOKENS if t not in id_of]
    if missing:
        raise VocabularyError(f"missing special token(s): {', '.join(missing)}")
    return Vocabulary(entries, id_of)


def load_vocabulary(path: str | os.PathLike) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        tokens = [line.rstrip("\r\n") for line in fh]
    while tokens and tokens[-1] == "":
        tokens.pop()
    return build_vocabulary(tokens)


def save_vocabulary(vocab: Vocabulary, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tok in vocab.entries:
            fh.write(tok + "\n")


def vocabulary_from_texts(texts: Iterable[str], latin: bool = True) -> Vocabulary:
    """Character-level vocabulary covering every character seen in ``texts``.

    Non-CJK characters get both a word-initial and a ``##`` continuation
    entry so any Latin/digit chunk tokenizes without [UNK]. With ``latin``
    set, ASCII letters and digits are always included.
    """
    seen: dict[str, None] = {}
    for text in texts:
        for ch in text:
            if not ch.isspace():
                seen.setdefault(ch)
    if latin:
        for ch in "0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ":
            seen.setdefault(ch)
    tokens = list(SPECIAL_TOKENS)
    cont = []
    for ch in seen:
        tokens.append(ch)
        if not is_cjk(ch):
            cont.append(CONTINUATION_PREFIX + ch)
    return build_vocabulary(tokens + cont)


class Token(NamedTuple):
    id: int
    start: int
    end: int

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True)
class TokenizedSentence:
    """Source characters plus subword tokens pointing back into them.

    ``chars`` is the original text; each token's ``[start, end)`` indexes it.
    Marker and [unused1] tokens carry empty spans.
    """

    chars: str
    tokens: tuple[Token, ...]
    has_unknown: bool = False

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def ids(self) -> list[int]:
        return [t.id for t in self.tokens]

    @property
    def spans(self) -> list[tuple[int, int]]:
        return [t.span for t in self.tokens]


def _chunks(text: str) -> Iterator[tuple[int, int]]:
    """Yield ``(start, end)`` of whitespace-delimited chunks, CJK isolated."""
    start = None
    for i, ch in enumerate(text):
        if ch.isspace():
            if start is not None:
                yield start, i
                start = None
        elif is_cjk(ch):
            if start is not None:
                yield start, i
                start = None
            yield i, i + 1
        elif start is None:
            start = i
    if start is not None:
        yield start, len(text)


def _fold(text: str) -> str:
    # length-preserving lowercase; characters whose lowercase form changes
    # length are left alone so spans stay valid
    out = []
    for ch in text:
        low = ch.lower()
        out.append(low if len(low) == 1 else ch)
    return "".join(out)


def _wordpiece(chunk: str, vocab: Vocabulary) -> list[tuple[int, int, int]] | None:
    """Greedy longest-match-first split; None when some position has no match."""
    if len(chunk) > MAX_CHUNK_CHARS:
        return None
    pieces = []
    start = 0
    n = len(chunk)
    while start < n:
        end = n
        found = None
        while start < end:
            sub = chunk[start:end]
            if start > 0:
                sub = vocab.continuation_prefix + sub
            tid = vocab.id_of.get(sub)
            if tid is not None:
                found = (tid, start, end)
                break
            end -= 1
        if found is None:
            return None
        pieces.append(found)
        start = end
    return pieces


def _tokenize(text: str, vocab: Vocabulary, lowercase: bool, mark_spaces: bool,
              offset: int = 0) -> tuple[list[Token], bool]:
    lookup = _fold(text) if lowercase else text
    tokens: list[Token] = []
    has_unknown = False
    prev_end = None
    prev_cjk = True
    for start, end in _chunks(text):
        chunk_cjk = end - start == 1 and is_cjk(text[start])
        if mark_spaces and prev_end is not None and not prev_cjk and not chunk_cjk \
                and start > prev_end:
            tokens.append(Token(vocab.space_id, offset + prev_end, offset + prev_end))
        pieces = _wordpiece(lookup[start:end], vocab)
        if pieces is None:
            tokens.append(Token(vocab.unk_id, offset + start, offset + end))
            has_unknown = True
        else:
            tokens.extend(Token(tid, offset + start + s, offset + start + e) for tid, s, e in pieces)
        prev_end = end
        prev_cjk = chunk_cjk
    return tokens, has_unknown


def tokenize(text: str, vocab: Vocabulary, lowercase: bool = False) -> TokenizedSentence:
    """WordPiece-tokenize ``text``.

    Whitespace-separated chunks are tokenized independently and no
    [unused1] is emitted; that token only appears when aligning gold words
    (see :func:`tokenize_words`).
    """
    if not text.strip():
        raise ValueError("cannot tokenize empty text")
    tokens, unk = _tokenize(text, vocab, lowercase, mark_spaces=False)
    return TokenizedSentence(text, tuple(tokens), unk)


def tokenize_words(words: Sequence[str], vocab: Vocabulary,
                   lowercase: bool = False) -> tuple[TokenizedSentence, list[int]]:
    """Tokenize each word on its own, with spans into ``"".join(words)``.

    Returns the sentence and, for each word, the number of tokens it produced.
    Whitespace runs between two non-CJK chunks of the same word become a
    single [unused1] token with an empty span.
    """
    tokens: list[Token] = []
    counts = []
    unk = False
    offset = 0
    for word in words:
        toks, u = _tokenize(word, vocab, lowercase, mark_spaces=True, offset=offset)
        tokens.extend(toks)
        counts.append(len(toks))
        unk = unk or u
        offset += len(word)
    return TokenizedSentence("".join(words), tuple(tokens), unk), counts


def add_markers(ts: TokenizedSentence, vocab: Vocabulary) -> TokenizedSentence:
    """Wrap with [CLS] and [SEP] (empty spans at either end)."""
    end = len(ts.chars)
    toks = (Token(vocab.cls_id, 0, 0),) + ts.tokens + (Token(vocab.sep_id, end, end),)
    return TokenizedSentence(ts.chars, toks, ts.has_unknown)


def detokenize_spans(ts: TokenizedSentence) -> list[tuple[int, int]]:
    return ts.spans
