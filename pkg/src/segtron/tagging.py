"""BMES tagging: gold segmentation -> token tags, and predicted tags -> words."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

from .vocab import (TokenizedSentence, Vocabulary, add_markers, tokenize,
                    tokenize_words, Token)


class Tag(IntEnum):
    B = 0
    M = 1
    E = 2
    S = 3
    START = 4
    END = 5


NUM_TAGS = 6
INTERIOR_TAGS = (Tag.B, Tag.M, Tag.E, Tag.S)
DEFAULT_MAX_LEN = 128

# allowed successor sets for the interior grammar
_FOLLOW = {
    Tag.START: {Tag.B, Tag.S, Tag.END},
    Tag.B: {Tag.M, Tag.E},
    Tag.M: {Tag.M, Tag.E},
    Tag.E: {Tag.B, Tag.S, Tag.END},
    Tag.S: {Tag.B, Tag.S, Tag.END},
}


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True)
class Segmentation:
    """A sentence as an ordered sequence of words."""

    words: tuple[str, ...]

    def __init__(self, words: Iterable[str]):
        words = tuple(words)
        for w in words:
            if not w or w.isspace():
                raise SegmentationError("empty word in segmentation")
            if w != w.strip():
                raise SegmentationError(f"word {w!r} has leading/trailing whitespace")
        object.__setattr__(self, "words", words)

    def __len__(self) -> int:
        return len(self.words)

    def __iter__(self):
        return iter(self.words)

    @property
    def text(self) -> str:
        return "".join(self.words)

    def spans(self) -> list[tuple[int, int]]:
        out = []
        pos = 0
        for w in self.words:
            out.append((pos, pos + len(w)))
            pos += len(w)
        return out


@dataclass(frozen=True)
class AlignedExample:
    tokenized: TokenizedSentence
    tags: tuple[Tag, ...]

    def __post_init__(self):
        if len(self.tags) != len(self.tokenized):
            raise ValueError("tag/token length mismatch")

    def __len__(self) -> int:
        return len(self.tags)


def word_tags(k: int) -> list[Tag]:
    if k == 1:
        return [Tag.S]
    return [Tag.B] + [Tag.M] * (k - 2) + [Tag.E]


def source_tags(seg: Segmentation) -> list[Tag]:
    """Per-character BMES tags."""
    tags: list[Tag] = []
    for w in seg.words:
        tags.extend(word_tags(len(w)))
    return tags


def validate_tag_string(tags: Sequence[int]) -> bool:
    """Check START ... END framing and the BMES successor grammar."""
    if len(tags) < 2 or tags[0] != Tag.START or tags[-1] != Tag.END:
        return False
    for prev, cur in zip(tags, tags[1:]):
        if cur not in _FOLLOW.get(prev, ()):
            return False
    return True


def align_tags(seg: Segmentation, vocab: Vocabulary, lowercase: bool = False) -> AlignedExample:
    """Tokenize each gold word and tag its tokens by position within the word."""
    ts, counts = tokenize_words(seg.words, vocab, lowercase=lowercase)
    tags = [Tag.START]
    for k in counts:
        tags.extend(word_tags(k))
    tags.append(Tag.END)
    return AlignedExample(add_markers(ts, vocab), tuple(tags))


def align_examples(seg: Segmentation, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN,
                   lowercase: bool = False) -> list[AlignedExample]:
    """Align ``seg``, splitting at word boundaries when the marked sequence exceeds ``max_len``.

    A single word longer than ``max_len - 2`` tokens is cut into token runs,
    each tagged as its own word.
    """
    if max_len < 3:
        raise ValueError("max_len must leave room for [CLS], [SEP] and one token")
    budget = max_len - 2
    full = align_tags(seg, vocab, lowercase=lowercase)
    if len(full) <= max_len:
        return [full]
    _, counts = tokenize_words(seg.words, vocab, lowercase=lowercase)
    body = list(full.tokenized.tokens[1:-1])

    # token groups per word, oversize words pre-cut
    groups: list[list[Token]] = []
    pos = 0
    for k in counts:
        toks = body[pos:pos + k]
        pos += k
        for i in range(0, len(toks), budget):
            groups.append(toks[i:i + budget])

    out = []
    piece: list[list[Token]] = []
    size = 0
    for g in groups:
        if piece and size + len(g) > budget:
            out.append(_piece_example(full.tokenized.chars, piece, vocab))
            piece, size = [], 0
        piece.append(g)
        size += len(g)
    if piece:
        out.append(_piece_example(full.tokenized.chars, piece, vocab))
    return out


def _piece_example(chars: str, groups: list[list[Token]], vocab: Vocabulary) -> AlignedExample:
    # spans stay relative to the full sentence's characters
    toks = [t for g in groups for t in g]
    spans = [t for t in toks if t.end > t.start]
    lo = spans[0].start if spans else 0
    hi = spans[-1].end if spans else 0
    tags = [Tag.START]
    for g in groups:
        tags.extend(word_tags(len(g)))
    tags.append(Tag.END)
    tokens = (Token(vocab.cls_id, lo, lo),) + tuple(toks) + (Token(vocab.sep_id, hi, hi),)
    unk = any(t.id == vocab.unk_id for t in toks)
    return AlignedExample(TokenizedSentence(chars, tokens, unk), tuple(tags))


def decode_tags(ts: TokenizedSentence, tags: Sequence[int]) -> Segmentation:
    """Turn per-token tags back into words over ``ts.chars``.

    B and S always open a new word; everything else (including invalid
    M/E runs) extends the current one. Words are the character range from
    the first to the last non-empty token span of each group, so interior
    whitespace survives and the original characters are never altered.
    """
    if len(tags) != len(ts.tokens):
        raise ValueError(f"{len(tags)} tags for {len(ts.tokens)} tokens")
    groups: list[list[tuple[int, int]]] = []
    for tok, tag in zip(ts.tokens[1:-1], tags[1:-1]):
        opener = tag == Tag.B or tag == Tag.S
        if opener or not groups:
            groups.append([])
        if tok.end > tok.start:
            groups[-1].append((tok.start, tok.end))
    words = []
    for g in groups:
        if not g:
            continue
        words.append(ts.chars[g[0][0]:g[-1][1]])
    return Segmentation(words)


def segment_tokens(text: str, vocab: Vocabulary, lowercase: bool = False) -> TokenizedSentence:
    """Inference-time tokenization with markers."""
    return add_markers(tokenize(text, vocab, lowercase=lowercase), vocab)


def tag_string(tags: Iterable[int]) -> str:
    return "".join(Tag(t).name if Tag(t) in INTERIOR_TAGS else "" for t in tags)
