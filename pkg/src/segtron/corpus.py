"""Segmented-corpus files, raw text, and a synthetic corpus generator."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .tagging import Segmentation

log = logging.getLogger(__name__)

SYNTHETIC_BASE = 0x4E00  # alphabet starts at the first CJK unified ideograph


class CorpusError(ValueError):
    pass


@dataclass
class Corpus:
    sentences: list[Segmentation]
    origin: str = "train"
    skipped_lines: int = field(default=0, compare=False)

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self) -> Iterator[Segmentation]:
        return iter(self.sentences)

    def __getitem__(self, i):
        return self.sentences[i]

    def texts(self) -> list[str]:
        return [s.text for s in self.sentences]


def _read_lines(path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read().splitlines()
    except UnicodeDecodeError as exc:
        raise CorpusError(f"{path}: not valid UTF-8 ({exc.reason} at byte {exc.start})") from None


def parse_segmented_line(line: str) -> Segmentation:
    # str.split() without arguments also splits on U+3000
    return Segmentation(line.split())


def load_segmented(path: str | os.PathLike, origin: str = "train") -> Corpus:
    """One sentence per line, words separated by runs of ASCII or ideographic spaces."""
    sentences = []
    skipped = 0
    for line in _read_lines(path):
        line = line.lstrip("﻿")
        seg = parse_segmented_line(line)
        if not seg.words:
            if line:
                skipped += 1
            continue
        sentences.append(seg)
    if skipped:
        log.warning("%s: skipped %d line(s) with no words", path, skipped)
    return Corpus(sentences, origin, skipped)


def write_segmented(corpus, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for seg in corpus:
            fh.write(" ".join(seg.words) + "\n")


def load_raw(path: str | os.PathLike) -> list[str]:
    """Unsegmented text, one sentence per line (blank lines kept as empty strings)."""
    return [line.lstrip("﻿") for line in _read_lines(path)]


# -- synthetic data ---------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    alphabet_size: int = 50
    lexicon_size: int = 200
    word_lengths: tuple[int, ...] = (1, 2, 3, 4)
    length_weights: tuple[float, ...] = (0.15, 0.45, 0.25, 0.15)
    sentence_words: tuple[int, int] = (6, 16)
    train_sentences: int = 2000
    test_fraction: float = 0.1
    seed: int = 0
    max_attempts_per_sentence: int = 200

    @property
    def test_sentences(self) -> int:
        # train is (1 - test_fraction) of the total
        return int(round(self.train_sentences * self.test_fraction / (1.0 - self.test_fraction)))


def _length_counts(spec: SyntheticSpec) -> dict[int, int]:
    w = np.asarray(spec.length_weights, dtype=float)
    if len(w) != len(spec.word_lengths) or (w < 0).any() or w.sum() <= 0:
        raise CorpusError("length_weights must be non-negative and match word_lengths")
    raw = w / w.sum() * spec.lexicon_size
    counts = np.floor(raw).astype(int)
    # hand out the remainder by largest fractional part
    for i in np.argsort(-(raw - counts), kind="stable")[:spec.lexicon_size - counts.sum()]:
        counts[i] += 1
    return dict(zip(spec.word_lengths, counts.tolist()))


def _segmentations(text: str, lexicon: set[str], max_word: int, cap: int = 2) -> int:
    """Number of ways to split ``text`` into lexicon words, saturating at ``cap``."""
    n = len(text)
    ways = [0] * (n + 1)
    ways[0] = 1
    for end in range(1, n + 1):
        total = 0
        for k in range(1, min(max_word, end) + 1):
            if ways[end - k] and text[end - k:end] in lexicon:
                total += ways[end - k]
        ways[end] = min(total, cap)
    return ways[n]


def build_lexicon(spec: SyntheticSpec, rng: np.random.Generator) -> list[str]:
    """Random words over the private alphabet, none a concatenation of others."""
    if spec.alphabet_size < 1 or spec.lexicon_size < 1:
        raise CorpusError("alphabet and lexicon must be non-empty")
    alphabet = [chr(SYNTHETIC_BASE + i) for i in range(spec.alphabet_size)]
    words: list[str] = []
    lex: set[str] = set()
    max_word = max(spec.word_lengths)
    for length, count in sorted(_length_counts(spec).items()):
        if count > spec.alphabet_size ** length:
            raise CorpusError(f"alphabet of {spec.alphabet_size} cannot hold {count} "
                              f"distinct words of length {length}")
        added = 0
        attempts = 0
        limit = 1000 * count + 1000
        while added < count:
            attempts += 1
            if attempts > limit:
                raise CorpusError(f"alphabet of {spec.alphabet_size} too small for {count} "
                                  f"unambiguous words of length {length}")
            w = "".join(alphabet[i] for i in rng.integers(0, spec.alphabet_size, size=length))
            if w in lex or (length > 1 and _segmentations(w, lex, max_word) > 0):
                continue
            lex.add(w)
            words.append(w)
            added += 1
    return words


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> tuple[Corpus, Corpus]:
    """Sample sentences from a fixed random lexicon; each has exactly one segmentation.

    Sentences whose character string admits a second segmentation under the
    lexicon are rejected and redrawn.
    """
    rng = np.random.default_rng(spec.seed)
    words = build_lexicon(spec, rng)
    lex = set(words)
    max_word = max(len(w) for w in words)
    lo, hi = spec.sentence_words
    if lo < 1 or hi < lo:
        raise CorpusError("sentence_words must be a range of positive integers")
    total = spec.train_sentences + spec.test_sentences
    sentences = []
    for _ in range(total):
        for _attempt in range(spec.max_attempts_per_sentence):
            k = int(rng.integers(lo, hi + 1))
            picked = [words[i] for i in rng.integers(0, len(words), size=k)]
            if _segmentations("".join(picked), lex, max_word) == 1:
                sentences.append(Segmentation(picked))
                break
        else:
            raise CorpusError(f"alphabet of {spec.alphabet_size} too small: could not draw an "
                              f"unambiguous sentence in {spec.max_attempts_per_sentence} attempts")
    return (Corpus(sentences[:spec.train_sentences], "train"),
            Corpus(sentences[spec.train_sentences:], "test"))
