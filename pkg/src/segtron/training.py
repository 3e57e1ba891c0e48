"""ADAM, the mini-batch training loop, and a finite-difference gradient checker."""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .evaluation import ScoreReport, score_corpus
from .model import Segmenter, TrainMode, batch_examples
from .tagging import Segmentation, align_examples

log = logging.getLogger(__name__)

# layer count -> batch size used when fine-tuning models of that depth
DEFAULT_BATCH_SCHEDULE = {1: 384, 3: 128, 6: 64, 12: 32}


def batch_size_for(layers: int, schedule: dict[int, int] = DEFAULT_BATCH_SCHEDULE,
                   default: int = 32) -> int:
    return schedule.get(layers, default)


FINE_TUNE_LR = 2e-5
FEATURE_LR = 1e-3
LR_SCHEDULES = ("constant", "linear")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: Optional[float] = None  # None: FINE_TUNE_LR, or FEATURE_LR in feature mode
    batch_size: int = 32
    max_epochs: int = 3
    max_seq_len: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    mode: TrainMode = TrainMode.FineTuneAll
    target_f1: Optional[float] = None  # stop once training F1 reaches this
    lr_schedule: str = "constant"      # or "linear": decay to zero at schedule_epochs
    warmup_fraction: float = 0.0       # linear ramp over this share of all steps
    schedule_epochs: Optional[int] = None  # schedule horizon; max_epochs when unset

    def __post_init__(self):
        object.__setattr__(self, "mode", TrainMode.parse(self.mode))
        if self.learning_rate is None:
            lr = FEATURE_LR if self.mode is TrainMode.FeatureBased else FINE_TUNE_LR
            object.__setattr__(self, "learning_rate", lr)
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("learning rate, batch size must be positive; epochs non-negative")
        if self.max_seq_len < 3:
            raise ValueError("max_seq_len must be at least 3")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.epsilon > 0):
            raise ValueError("invalid ADAM hyperparameters")
        if self.schedule_epochs is not None and self.schedule_epochs <= 0:
            raise ValueError("schedule_epochs must be positive")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "TrainConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            name = key.strip().replace("-", "_")
            if name not in kinds:
                raise KeyError(f"unknown config key {key!r}")
            kwargs[name] = _coerce(name, raw)
        return cls(**kwargs)


def _coerce(name: str, raw: str):
    raw = raw.strip()
    if name == "mode":
        return TrainMode.parse(raw)
    if name == "target_f1":
        return None if raw.lower() in ("", "none") else float(raw)
    if name == "lr_schedule":
        return raw
    if name == "schedule_epochs":
        return None if raw.lower() in ("", "none") else int(raw)
    if name in ("batch_size", "max_epochs", "max_seq_len", "seed"):
        return int(raw)
    return float(raw)


def read_key_values(path: str | os.PathLike) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


# -- ADAM -------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              config: TrainConfig, lr: Optional[float] = None):
    """In-place bias-corrected ADAM update; returns ``(params, state)``.

    Tensors without a gradient entry are left alone. ``lr`` overrides the
    configured rate for this step (used by learning-rate schedules).
    """
    state.step += 1
    t = state.step
    lr = config.learning_rate if lr is None else lr
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + config.epsilon)
    return params, state


# -- training loop ----------------------------------------------------------

@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    f1: float
    accuracy: float
    seconds: float

    def to_tsv(self) -> str:
        return f"{self.epoch}\t{self.loss:.6f}\t{self.f1:.6f}\t{self.accuracy:.6f}\t{self.seconds:.3f}"

    def deterministic_part(self) -> tuple:
        return (self.epoch, self.loss, self.f1, self.accuracy)


@dataclass
class TrainResult:
    log: list[EpochRecord]
    model: Segmenter
    steps: int


def evaluate(model: Segmenter, corpus: Iterable[Segmentation]) -> ScoreReport:
    gold = list(corpus)
    pred = model.segment([g.text for g in gold])
    return score_corpus(gold, pred)


def _padded(feats: Sequence[np.ndarray]) -> np.ndarray:
    n = max(f.shape[0] for f in feats)
    out = np.zeros((len(feats), n, feats[0].shape[1]))
    for b, f in enumerate(feats):
        out[b, :f.shape[0]] = f
    return out


def scheduled_lr(config: TrainConfig, step: int, total_steps: int) -> float:
    """Learning rate for optimizer step ``step`` (1-based) of ``total_steps``."""
    warmup = config.warmup_fraction * total_steps
    if step <= warmup:
        return config.learning_rate * step / warmup
    if config.lr_schedule == "linear":
        remaining = (total_steps - step + 1) / max(total_steps - warmup, 1)
        return config.learning_rate * max(0.0, remaining)
    return config.learning_rate


def train(corpus: Iterable[Segmentation], model: Segmenter, config: TrainConfig,
          log_path: Optional[str | os.PathLike] = None,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """Train ``model`` in place, resuming after ``model.epochs_done``.

    Each epoch draws its shuffle and dropout noise from a generator seeded
    with ``(seed, epoch)``, so a run resumed from a checkpoint reproduces
    the uninterrupted run exactly.
    """
    sentences = list(corpus)
    if not sentences:
        raise ValueError("empty training corpus")
    if model.mode is not config.mode:
        raise ValueError(f"model built for mode {model.mode.value}, config says {config.mode.value}")
    max_len = min(config.max_seq_len, model.max_len)
    examples = [ex for seg in sentences
                for ex in align_examples(seg, model.vocab, max_len, lowercase=model.lowercase)]
    pad = model.vocab.pad_id

    features = None
    if model.mode is TrainMode.FeatureBased:
        # encoder is frozen and run without dropout: compute features once
        features = []
        for s in range(0, len(examples), 64):
            chunk = examples[s:s + 64]
            batch = batch_examples(chunk, pad)
            f = model.features(batch)
            features.extend(f[b, :batch.lengths[b]] for b in range(len(chunk)))

    state = model.optimizer if model.optimizer is not None else AdamState()
    model.optimizer = state
    steps_per_epoch = math.ceil(len(examples) / config.batch_size)
    total_steps = steps_per_epoch * (config.schedule_epochs or config.max_epochs)

    records = []
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for epoch in range(model.epochs_done + 1, config.max_epochs + 1):
            rng = np.random.default_rng([config.seed, epoch])
            order = rng.permutation(len(examples))
            t0 = time.perf_counter()
            losses = []
            for s in range(0, len(order), config.batch_size):
                idx = order[s:s + config.batch_size]
                batch = batch_examples([examples[i] for i in idx], pad)
                feats = None if features is None else _padded([features[i] for i in idx])
                loss, grads = model.loss_and_grads(batch, rng=rng, features=feats)
                if not math.isfinite(loss):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}")
                adam_step(model.trainable(), grads, state, config,
                          lr=scheduled_lr(config, state.step + 1, total_steps))
                losses.append(loss)
            seconds = time.perf_counter() - t0
            report = evaluate(model, sentences)
            rec = EpochRecord(epoch, float(np.mean(losses)), report.f1, report.tag_accuracy,
                              seconds)
            records.append(rec)
            model.epochs_done = epoch
            log.info("epoch %d loss %.4f f1 %.4f acc %.4f (%.1fs)", epoch, rec.loss, rec.f1,
                     rec.accuracy, seconds)
            if log_fh:
                log_fh.write(rec.to_tsv() + "\n")
                log_fh.flush()
            if on_epoch:
                on_epoch(rec)
            if config.target_f1 is not None and rec.f1 >= config.target_f1:
                break
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(records, model, state.step)


# -- gradient checking ------------------------------------------------------

FD_STEP = 1e-5


@dataclass(frozen=True)
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def ok(self) -> bool:
        return self.max_error <= self.tolerance

    @property
    def failing(self) -> list[str]:
        return [k for k, e in self.errors.items() if e > self.tolerance]

    def to_text(self) -> str:
        width = max((len(k) for k in self.errors), default=6)
        lines = [f"{'tensor':<{width}}  max_rel_error  status"]
        for k, e in self.errors.items():
            lines.append(f"{k:<{width}}  {e:13.3e}  {'ok' if e <= self.tolerance else 'FAIL'}")
        return "\n".join(lines)


def grad_check(loss_fn: Callable[[dict], tuple[float, dict]], params: dict[str, np.ndarray],
               tolerance: float = 1e-4, step: float = FD_STEP) -> GradCheckReport:
    """Compare ``loss_fn``'s analytic gradients with central differences.

    ``loss_fn(params)`` returns ``(loss, grads)``. Each entry of every tensor
    in ``params`` is perturbed in place and restored. The per-entry error is
    ``|a - f| / max(|a|, |f|, 1e-8)``; the report keeps the max per tensor.
    """
    loss, analytic = loss_fn(params)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    analytic = {k: np.array(v, dtype=float, copy=True) for k, v in analytic.items()}
    errors = {}
    for name, p in params.items():
        a = analytic.get(name, np.zeros_like(p))
        fd = np.zeros_like(p, dtype=float)
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            lp, _ = loss_fn(params)
            flat[i] = old - step
            lm, _ = loss_fn(params)
            flat[i] = old
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise FloatingPointError(f"non-finite loss while perturbing {name}")
            fd.reshape(-1)[i] = (lp - lm) / (2 * step)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-8)
        errors[name] = float((np.abs(a - fd) / denom).max()) if p.size else 0.0
    return GradCheckReport(errors, tolerance)
