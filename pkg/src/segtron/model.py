"""A segmenter: vocabulary, encoder, classifier head and optional BiLSTM."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from . import encoder as enc
from .feature_head import (CombinationStrategy, bilstm_backward_batch, bilstm_forward_batch,
                           check_strategy, combine_layers, feature_width, init_bilstm)
from .heads import (crf_decode_batch, crf_loss_batch, init_transitions, softmax_decode_batch,
                    softmax_loss_batch, transition_grad_mask)
from .tagging import (AlignedExample, DEFAULT_MAX_LEN, Segmentation, Tag, decode_tags)
from .vocab import TokenizedSentence, Vocabulary, add_markers, tokenize

HEADS = ("softmax", "crf")
DEFAULT_LSTM_HIDDEN = 64


class TrainMode(str, Enum):
    FineTuneAll = "finetune"
    FineTuneFirstLayerOnly = "first-layer"
    FeatureBased = "feature"

    @classmethod
    def parse(cls, name: str) -> "TrainMode":
        if isinstance(name, TrainMode):
            return name
        if name in cls.__members__:
            return cls[name]
        return cls(name)


FIRST_LAYER_TENSORS = ("embed.word", "embed.position")
HEAD_TENSORS = ("output.weight", "output.bias")


@dataclass
class Batch:
    ids: np.ndarray
    lengths: np.ndarray
    gold: Optional[np.ndarray] = None
    index: Optional[list[int]] = None


def make_batch(seqs: Sequence[TokenizedSentence], pad_id: int,
               tags: Optional[Sequence[Sequence[int]]] = None) -> Batch:
    lengths = np.array([len(s) for s in seqs])
    n = int(lengths.max())
    ids = np.full((len(seqs), n), pad_id, dtype=np.int64)
    gold = None if tags is None else np.full((len(seqs), n), int(Tag.END), dtype=np.int64)
    for b, s in enumerate(seqs):
        ids[b, :lengths[b]] = s.ids
        if gold is not None:
            gold[b, :lengths[b]] = tags[b]
    return Batch(ids, lengths, gold)


def batch_examples(examples: Sequence[AlignedExample], pad_id: int) -> Batch:
    return make_batch([e.tokenized for e in examples], pad_id, [e.tags for e in examples])


@dataclass
class Segmenter:
    vocab: Vocabulary
    config: enc.EncoderConfig
    encoder: dict[str, np.ndarray]
    head: str = "crf"
    transitions: np.ndarray = field(default_factory=init_transitions)
    mode: TrainMode = TrainMode.FineTuneAll
    strategy: Optional[CombinationStrategy] = None
    lstm: Optional[dict[str, np.ndarray]] = None
    max_len: int = DEFAULT_MAX_LEN
    lowercase: bool = False
    epochs_done: int = 0
    optimizer: Optional[object] = None  # training.AdamState

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        self.mode = TrainMode.parse(self.mode)
        if self.mode is TrainMode.FeatureBased:
            if self.strategy is None or self.lstm is None:
                raise ValueError("feature-based mode needs a strategy and BiLSTM parameters")
            self.strategy = CombinationStrategy(self.strategy)
            check_strategy(self.strategy, self.config.layers)
        if self.max_len > self.config.max_positions:
            raise ValueError(f"max_len {self.max_len} exceeds encoder max_positions "
                             f"{self.config.max_positions}")

    @classmethod
    def create(cls, vocab: Vocabulary, head: str = "crf", mode="finetune",
               strategy: Optional[CombinationStrategy | str] = None,
               layers: int = 2, hidden: int = 64, heads: int = 4, ffn: Optional[int] = None,
               max_len: int = DEFAULT_MAX_LEN, dropout: float = 0.1,
               lstm_hidden: int = DEFAULT_LSTM_HIDDEN, seed: int = 0,
               lowercase: bool = False, encoder_params=None) -> "Segmenter":
        rng = np.random.default_rng(seed)
        config = enc.EncoderConfig(vocab_size=len(vocab), layers=layers, hidden=hidden,
                                   heads=heads, ffn=ffn or 4 * hidden, max_positions=max_len,
                                   dropout=dropout)
        params = enc.init_params(config, rng) if encoder_params is None else encoder_params
        mode = TrainMode.parse(mode)
        lstm = None
        if mode is TrainMode.FeatureBased:
            strategy = CombinationStrategy.parse(strategy or "last") \
                if not isinstance(strategy, CombinationStrategy) else strategy
            lstm = init_bilstm(feature_width(strategy, hidden), lstm_hidden, rng)
        elif strategy is not None and not isinstance(strategy, CombinationStrategy):
            strategy = CombinationStrategy.parse(strategy)
        return cls(vocab, config, params, head, init_transitions(), mode, strategy, lstm,
                   max_len=max_len, lowercase=lowercase)

    # -- parameters ---------------------------------------------------------

    def all_tensors(self) -> dict[str, np.ndarray]:
        out = {"encoder." + k: v for k, v in self.encoder.items()}
        out["crf.transitions"] = self.transitions
        if self.lstm is not None:
            out.update({"lstm." + k: v for k, v in self.lstm.items()})
        return out

    def trainable(self) -> dict[str, np.ndarray]:
        """Tensors the current mode updates (views into the live arrays)."""
        out: dict[str, np.ndarray] = {}
        if self.mode is TrainMode.FeatureBased:
            out.update({"lstm." + k: v for k, v in self.lstm.items()})
        elif self.mode is TrainMode.FineTuneFirstLayerOnly:
            for k in FIRST_LAYER_TENSORS + HEAD_TENSORS:
                out["encoder." + k] = self.encoder[k]
        else:
            out.update({"encoder." + k: v for k, v in self.encoder.items()})
        if self.head == "crf":
            out["crf.transitions"] = self.transitions
        return out

    # -- computation --------------------------------------------------------

    def features(self, batch: Batch) -> np.ndarray:
        """Combined frozen-encoder features (no dropout)."""
        acts = enc.forward(batch.ids, self.encoder, self.config, batch.lengths)
        return combine_layers(acts, self.strategy)

    def emissions(self, batch: Batch, rng=None, features=None):
        if self.mode is TrainMode.FeatureBased:
            feats = self.features(batch) if features is None else features
            logits, cache = bilstm_forward_batch(feats, self.lstm, batch.lengths)
            return logits, cache
        acts = enc.forward(batch.ids, self.encoder, self.config, batch.lengths, rng=rng)
        return acts.logits, acts

    def loss_and_grads(self, batch: Batch, rng=None, features=None):
        """Batch loss and gradients keyed like :meth:`trainable`."""
        em, cache = self.emissions(batch, rng, features)
        grads: dict[str, np.ndarray] = {}
        if self.head == "crf":
            loss, dem, dtr = crf_loss_batch(em, self.transitions, batch.gold, batch.lengths)
            grads["crf.transitions"] = dtr * transition_grad_mask()
        else:
            loss, dem = softmax_loss_batch(em, batch.gold, batch.lengths)
        if self.mode is TrainMode.FeatureBased:
            g, _ = bilstm_backward_batch(dem, self.lstm, cache)
            grads.update({"lstm." + k: v for k, v in g.items()})
        else:
            g, _ = enc.backward(cache, dem, self.encoder, self.config)
            keep = self.trainable()
            grads.update({"encoder." + k: v for k, v in g.items() if "encoder." + k in keep})
        return loss, grads

    def decode(self, em: np.ndarray, lengths) -> list[list[int]]:
        if self.head == "crf":
            return crf_decode_batch(em, self.transitions, lengths)
        return softmax_decode_batch(em, lengths)

    def predict_tags(self, seqs: Sequence[TokenizedSentence], batch_size: int = 64) -> list[list[int]]:
        """Tag marked sequences (each already within ``max_len``)."""
        order = sorted(range(len(seqs)), key=lambda i: len(seqs[i]))
        out: list[Optional[list[int]]] = [None] * len(seqs)
        for s in range(0, len(order), batch_size):
            idx = order[s:s + batch_size]
            batch = make_batch([seqs[i] for i in idx], self.vocab.pad_id)
            em, _ = self.emissions(batch)
            for i, tags in zip(idx, self.decode(em, batch.lengths)):
                out[i] = tags
        return out

    def segment(self, texts: Iterable[str], batch_size: int = 64) -> list[Segmentation]:
        """Segment raw sentences; over-long inputs are tagged window by window."""
        texts = list(texts)
        windows: list[TokenizedSentence] = []
        owners: list[int] = []
        marked: list[Optional[TokenizedSentence]] = []
        budget = self.max_len - 2
        for k, text in enumerate(texts):
            if not text.strip():
                marked.append(None)
                continue
            ts = tokenize(text, self.vocab, lowercase=self.lowercase)
            marked.append(add_markers(ts, self.vocab))
            body = ts.tokens
            for i in range(0, len(body), budget):
                piece = TokenizedSentence(ts.chars, tuple(body[i:i + budget]), ts.has_unknown)
                windows.append(add_markers(piece, self.vocab))
                owners.append(k)
        tags = self.predict_tags(windows, batch_size)
        interior: dict[int, list[int]] = {}
        for k, t in zip(owners, tags):
            interior.setdefault(k, []).extend(t[1:-1])
        out = []
        for k, m in enumerate(marked):
            if m is None:
                out.append(Segmentation([]))
            else:
                out.append(decode_tags(m, [int(Tag.START)] + interior[k] + [int(Tag.END)]))
        return out


def feature_pipeline(sentence: str, encoder_params, config: enc.EncoderConfig,
                     strategy: CombinationStrategy, bilstm_params, head: str,
                     vocab: Vocabulary, transitions=None) -> list[int]:
    """Frozen encoder -> combined layers -> BiLSTM -> decoded tag sequence."""
    ts = add_markers(tokenize(sentence, vocab), vocab)
    acts = enc.forward(np.array(ts.ids), encoder_params, config)
    feats = combine_layers(acts, strategy)
    logits, _ = bilstm_forward_batch(feats[None], bilstm_params, [len(ts)])
    if head == "crf":
        return crf_decode_batch(logits, transitions if transitions is not None
                                else init_transitions(), [len(ts)])[0]
    return softmax_decode_batch(logits, [len(ts)])[0]
