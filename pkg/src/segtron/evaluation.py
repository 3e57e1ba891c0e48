"""Word-level P/R/F1 and tag accuracy, corpus statistics, and gold-consistency checks."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, fields
from typing import Iterable, Optional, Sequence

from .tagging import Segmentation, source_tags
from .vocab import is_cjk


class AlignmentError(ValueError):
    """Gold and predicted segmentations cover different characters."""


@dataclass(frozen=True)
class ScoreReport:
    gold_words: int = 0
    pred_words: int = 0
    correct_words: int = 0
    tokens: int = 0
    correct_tags: int = 0

    def __add__(self, other: "ScoreReport") -> "ScoreReport":
        return ScoreReport(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    @property
    def precision(self) -> float:
        return self.correct_words / self.pred_words if self.pred_words else 0.0

    @property
    def recall(self) -> float:
        return self.correct_words / self.gold_words if self.gold_words else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    @property
    def tag_accuracy(self) -> float:
        return self.correct_tags / self.tokens if self.tokens else 0.0

    def to_tsv(self) -> str:
        vals = [self.precision, self.recall, self.f1, self.tag_accuracy]
        counts = [self.gold_words, self.pred_words, self.correct_words, self.tokens,
                  self.correct_tags]
        return "\t".join([f"{v:.6f}" for v in vals] + [str(c) for c in counts])

    def to_text(self) -> str:
        return (f"precision      {self.precision:.4f}  ({self.correct_words}/{self.pred_words})\n"
                f"recall         {self.recall:.4f}  ({self.correct_words}/{self.gold_words})\n"
                f"f1             {self.f1:.4f}\n"
                f"tag accuracy   {self.tag_accuracy:.4f}  ({self.correct_tags}/{self.tokens})")


TSV_HEADER = "precision\trecall\tf1\ttag_accuracy\tgold\tpred\tcorrect\tchars\tcorrect_tags"


def score(gold: Segmentation, pred: Segmentation) -> ScoreReport:
    """Exact-span word matching plus per-character BMES agreement."""
    if gold.text != pred.text:
        raise AlignmentError(f"character mismatch: {gold.text!r} vs {pred.text!r}")
    correct = len(set(gold.spans()) & set(pred.spans()))
    g, p = source_tags(gold), source_tags(pred)
    return ScoreReport(len(gold), len(pred), correct, len(g),
                       sum(a == b for a, b in zip(g, p)))


def score_corpus(gold: Sequence[Segmentation], pred: Sequence[Segmentation]) -> ScoreReport:
    if len(gold) != len(pred):
        raise AlignmentError(f"{len(gold)} gold sentences vs {len(pred)} predicted")
    total = ScoreReport()
    for i, (g, p) in enumerate(zip(gold, pred)):
        try:
            total = total + score(g, p)
        except AlignmentError as exc:
            raise AlignmentError(f"sentence {i + 1}: {exc}") from None
    return total


# -- corpus statistics ------------------------------------------------------

def _is_latin(ch: str) -> bool:
    return ("a" <= ch <= "z" or "A" <= ch <= "Z"
            or "Ａ" <= ch <= "Ｚ" or "ａ" <= ch <= "ｚ")


def _is_digit(ch: str) -> bool:
    return "0" <= ch <= "9" or "０" <= ch <= "９"


def word_category(word: str) -> Optional[str]:
    """'chinese', 'english', 'digit', or None for mixed/other words."""
    if all(is_cjk(c) for c in word):
        return "chinese"
    if all(_is_latin(c) for c in word):
        return "english"
    if all(_is_digit(c) for c in word):
        return "digit"
    return None


@dataclass(frozen=True)
class CorpusStats:
    sentences: int = 0
    words: int = 0
    chinese_words: int = 0
    english_words: int = 0
    digit_words: int = 0
    chars: int = 0
    oov_types: Optional[int] = None
    oov_tokens: Optional[int] = None

    @property
    def oov_rate(self) -> Optional[float]:
        if self.oov_tokens is None:
            return None
        return self.oov_tokens / self.words if self.words else 0.0

    def to_text(self) -> str:
        lines = [f"sentences      {self.sentences}",
                 f"words          {self.words}",
                 f"chinese words  {self.chinese_words}",
                 f"english words  {self.english_words}",
                 f"digit words    {self.digit_words}",
                 f"chars          {self.chars}"]
        if self.oov_tokens is not None:
            lines.append(f"oov            {self.oov_types} types / {self.oov_tokens} tokens, "
                         f"rate {self.oov_rate:.3f}")
        return "\n".join(lines)


def corpus_stats(corpus: Iterable[Segmentation],
                 training_lexicon: Optional[Iterable[str]] = None) -> CorpusStats:
    """Table-style counts. OOV fields are filled only when a lexicon is given.

    ``oov_types`` counts distinct unseen words, ``oov_tokens`` their
    occurrences; ``oov_rate`` is ``oov_tokens / words``.
    """
    lexicon = None if training_lexicon is None else set(training_lexicon)
    cats: Counter = Counter()
    sentences = words = chars = oov_tokens = 0
    oov = set()
    for seg in corpus:
        sentences += 1
        for w in seg.words:
            words += 1
            chars += len(w)
            cats[word_category(w)] += 1
            if lexicon is not None and w not in lexicon:
                oov_tokens += 1
                oov.add(w)
    return CorpusStats(sentences, words, cats["chinese"], cats["english"], cats["digit"], chars,
                       None if lexicon is None else len(oov),
                       None if lexicon is None else oov_tokens)


def lexicon(corpus: Iterable[Segmentation]) -> set[str]:
    return {w for seg in corpus for w in seg.words}


# -- train/test consistency -------------------------------------------------

@dataclass(frozen=True)
class InconsistencyRecord:
    surface: str
    variants: tuple[str, ...]          # segmented forms, words joined by spaces
    train_counts: tuple[int, ...]      # aligned with variants
    test_counts: tuple[int, ...]

    def rows(self):
        for v, a, b in zip(self.variants, self.train_counts, self.test_counts):
            if a:
                yield (self.surface, "train", v, a)
            if b:
                yield (self.surface, "test", v, b)


def _word_aligned_spans(corpus: Iterable[Segmentation], min_len: int, max_len: int,
                        keep: Optional[set] = None) -> dict[str, Counter]:
    """Surface -> Counter of segmented variants, over runs of whole words."""
    out: dict[str, Counter] = defaultdict(Counter)
    for seg in corpus:
        ws = seg.words
        for i in range(len(ws)):
            size = 0
            for j in range(i, len(ws)):
                size += len(ws[j])
                if size > max_len:
                    break
                if size >= min_len:
                    surface = "".join(ws[i:j + 1])
                    if keep is None or surface in keep:
                        out[surface][" ".join(ws[i:j + 1])] += 1
    return out


def _dominant(counter: Counter) -> set[str]:
    top = max(counter.values())
    return {v for v, c in counter.items() if c == top}


def find_inconsistencies(train_corpus: Iterable[Segmentation], test_corpus: Iterable[Segmentation],
                         min_len: int = 4, max_len: int = 8) -> list[InconsistencyRecord]:
    """Strings segmented one way in training gold and another way in test gold.

    Candidates are character strings of ``min_len..max_len`` characters that
    start and end on gold word boundaries in both splits. A string is
    reported when its most frequent segmentation in train differs from the
    most frequent one in test; a tie for most frequent within either split
    also counts as inconsistent.
    """
    test = _word_aligned_spans(test_corpus, min_len, max_len)
    train = _word_aligned_spans(train_corpus, min_len, max_len, keep=set(test))
    records = []
    for surface in sorted(train):
        tr, te = train[surface], test[surface]
        dom_tr, dom_te = _dominant(tr), _dominant(te)
        if len(dom_tr) == 1 and dom_tr == dom_te:
            continue
        variants = tuple(sorted(set(tr) | set(te)))
        if len(variants) < 2:
            continue
        records.append(InconsistencyRecord(surface, variants,
                                           tuple(tr[v] for v in variants),
                                           tuple(te[v] for v in variants)))
    return records


def inconsistencies_tsv(records: Iterable[InconsistencyRecord]) -> str:
    lines = ["surface\tsplit\tvariant\tcount"]
    for r in records:
        lines.extend("\t".join(map(str, row)) for row in r.rows())
    return "\n".join(lines) + "\n"
