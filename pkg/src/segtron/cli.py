"""segtron command line: synth, train, segment, eval, stats, analyze, extract, gradcheck."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .corpus import (Corpus, CorpusError, SyntheticSpec, generate_synthetic, load_raw,
                     load_segmented, write_segmented)
from .evaluation import (AlignmentError, TSV_HEADER, corpus_stats, find_inconsistencies,
                         inconsistencies_tsv, lexicon, score_corpus)
from .feature_head import CombinationStrategy, combine_layers
from .encoder import forward
from .model import Segmenter, TrainMode
from .tagging import SegmentationError
from .training import (TrainConfig, batch_size_for, read_key_values, train)
from .vocab import VocabularyError, load_vocabulary, save_vocabulary, tokenize, add_markers, \
    vocabulary_from_texts

log = logging.getLogger("segtron")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

MODES = {"finetune": TrainMode.FineTuneAll, "first-layer": TrainMode.FineTuneFirstLayerOnly,
         "feature": TrainMode.FeatureBased}
COMBINE = ("first", "second-to-last", "last", "sum4", "concat4", "sumall")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _threads(n):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


# -- commands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = SyntheticSpec(alphabet_size=args.alphabet, lexicon_size=args.lexicon,
                         train_sentences=args.sentences, seed=args.seed)
    train_c, test_c = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_segmented(train_c, out / "train.seg")
    write_segmented(test_c, out / "test.seg")
    with open(out / "test.raw", "w", encoding="utf-8", newline="\n") as fh:
        for seg in test_c:
            fh.write(seg.text + "\n")
    save_vocabulary(vocabulary_from_texts(train_c.texts()), out / "vocab.txt")
    print(f"wrote {len(train_c)} train / {len(test_c)} test sentences to {out}")
    return EXIT_OK


def _train_config(args, layers: int) -> TrainConfig:
    values = read_key_values(args.config) if args.config else {}
    cli = {
        "learning_rate": args.lr, "batch_size": args.batch, "max_epochs": args.epochs,
        "seed": args.seed, "max_seq_len": args.max_len, "target_f1": args.target_f1,
        "lr_schedule": args.lr_schedule, "warmup_fraction": args.warmup,
        "schedule_epochs": args.schedule_epochs,
    }
    for k, v in cli.items():
        if v is not None:
            values[k] = str(v)
    values["mode"] = MODES[args.mode].value
    values.setdefault("batch_size", str(batch_size_for(layers)))
    try:
        return TrainConfig.from_mapping(values)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args) -> int:
    corpus = load_segmented(args.corpus)
    if not len(corpus):
        raise DataError(f"{args.corpus}: no sentences")
    mode = MODES[args.mode]
    if args.resume:
        model = ckpt.load_checkpoint(args.resume)
        if model.mode is not mode or model.head != args.head:
            raise UsageError("--mode/--head must match the resumed checkpoint")
    else:
        encoder_params = None
        if args.encoder:
            base = ckpt.load_checkpoint(args.encoder)
            vocab = base.vocab
            encoder_params = base.encoder
            layers, hidden, heads, ffn = (base.config.layers, base.config.hidden,
                                          base.config.heads, base.config.ffn)
            max_positions = base.config.max_positions
        else:
            vocab = load_vocabulary(args.vocab) if args.vocab else \
                vocabulary_from_texts(corpus.texts())
            layers, hidden, heads, ffn = args.layers, args.hidden, args.heads, None
            max_positions = args.max_len or 128
        try:
            model = Segmenter.create(vocab, head=args.head, mode=mode,
                                     strategy=args.combine if mode is TrainMode.FeatureBased
                                     else None,
                                     layers=layers, hidden=hidden, heads=heads, ffn=ffn,
                                     max_len=max_positions, dropout=args.dropout,
                                     lstm_hidden=args.lstm_hidden, seed=args.seed,
                                     encoder_params=encoder_params)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    config = _train_config(args, model.config.layers)
    result = train(corpus, model, config, log_path=args.log)
    ckpt.save_checkpoint(model, args.checkpoint)
    for rec in result.log:
        print(rec.to_tsv())
    print(f"saved {args.checkpoint} after {result.steps} optimizer steps", file=sys.stderr)
    return EXIT_OK


def cmd_segment(args) -> int:
    model = ckpt.load_checkpoint(args.checkpoint)
    if args.head:
        model.head = args.head
    lines = load_raw(args.input)
    segs = model.segment(lines)
    with open(args.out, "w", encoding="utf-8", newline="\n") if args.out else \
            nullcontext(sys.stdout) as fh:
        for seg in segs:
            fh.write(" ".join(seg.words) + "\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    gold = load_segmented(args.gold, "test")
    pred = load_segmented(args.pred, "test")
    report = score_corpus(gold.sentences, pred.sentences)
    if args.format == "tsv":
        print(TSV_HEADER)
        print(report.to_tsv())
    else:
        print(report.to_text())
    return EXIT_OK


def cmd_stats(args) -> int:
    corpus = load_segmented(args.corpus)
    lex = lexicon(load_segmented(args.train)) if args.train else None
    print(corpus_stats(corpus, lex).to_text())
    return EXIT_OK


def cmd_analyze(args) -> int:
    records = find_inconsistencies(load_segmented(args.train), load_segmented(args.test, "test"),
                                   min_len=args.min_len, max_len=args.max_len)
    text = inconsistencies_tsv(records)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"{len(records)} inconsistent strings", file=sys.stderr)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_extract(args) -> int:
    model = ckpt.load_checkpoint(args.checkpoint)
    strategy = CombinationStrategy.parse(args.combine)
    arrays = {}
    for i, line in enumerate(load_raw(args.input)):
        if not line.strip():
            continue
        ts = add_markers(tokenize(line, model.vocab, lowercase=model.lowercase), model.vocab)
        if len(ts) > model.config.max_positions:
            raise DataError(f"line {i + 1}: {len(ts)} tokens exceed max_positions")
        acts = forward(np.array(ts.ids), model.encoder, model.config)
        arrays[f"line{i + 1}"] = combine_layers(acts, strategy)
    np.savez(args.out, **arrays)
    print(f"wrote features for {len(arrays)} lines to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    values = read_key_values(args.config) if args.config else {}
    try:
        reports = run_all(values)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    failed = False
    for name, rep in reports.items():
        print(f"== {name} (max {rep.max_error:.3e})")
        print(rep.to_text())
        failed = failed or not rep.ok
    if failed:
        raise NumericFailure("gradient check failed")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="segtron", description="Chinese word segmentation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic segmented corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--alphabet", type=int, default=50)
    s.add_argument("--lexicon", type=int, default=200)
    s.add_argument("--sentences", type=int, default=2000, help="training sentences")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a segmenter")
    t.add_argument("--corpus", required=True)
    t.add_argument("--mode", choices=list(MODES), default="finetune")
    t.add_argument("--head", choices=["softmax", "crf"], default="crf")
    t.add_argument("--combine", choices=COMBINE, default="last")
    t.add_argument("--layers", type=int, default=2)
    t.add_argument("--hidden", type=int, default=64)
    t.add_argument("--heads", type=int, default=4)
    t.add_argument("--dropout", type=float, default=0.1)
    t.add_argument("--lstm-hidden", type=int, default=64)
    t.add_argument("--lr", type=float, default=None, help="default 2e-5, or 1e-3 in feature mode")
    t.add_argument("--batch", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--max-len", type=int, default=None, help="default 128")
    t.add_argument("--target-f1", type=float, default=None)
    t.add_argument("--lr-schedule", choices=["constant", "linear"], default=None,
                   help="linear decays to zero at --schedule-epochs")
    t.add_argument("--schedule-epochs", type=int, default=None,
                   help="schedule horizon (default --epochs); keep it fixed across resumes")
    t.add_argument("--warmup", type=float, default=None,
                   help="share of all steps spent ramping up the learning rate")
    t.add_argument("--config", help="key=value training config file")
    t.add_argument("--vocab", help="vocabulary file (one token per line)")
    t.add_argument("--encoder", help="checkpoint supplying encoder weights and vocabulary")
    t.add_argument("--resume", help="continue training from this checkpoint")
    t.add_argument("--checkpoint", default="model.ckpt")
    t.add_argument("--log", default="train.log")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("segment", help="segment raw text with a checkpoint")
    g.add_argument("--input", required=True)
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--head", choices=["softmax", "crf"], default=None,
                   help="decode with this head instead of the trained one")
    g.add_argument("--out")
    g.set_defaults(func=cmd_segment)

    e = sub.add_parser("eval", help="score predictions against gold")
    e.add_argument("--gold", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--format", choices=["text", "tsv"], default="text")
    e.set_defaults(func=cmd_eval)

    st = sub.add_parser("stats", help="corpus statistics")
    st.add_argument("--corpus", required=True)
    st.add_argument("--train", help="training corpus for OOV counts")
    st.set_defaults(func=cmd_stats)

    a = sub.add_parser("analyze", help="train/test segmentation inconsistencies")
    a.add_argument("--train", required=True)
    a.add_argument("--test", required=True)
    a.add_argument("--min-len", type=int, default=4)
    a.add_argument("--max-len", type=int, default=8)
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    x = sub.add_parser("extract", help="dump combined encoder features to .npz")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--input", required=True)
    x.add_argument("--combine", choices=COMBINE, default="last")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_extract)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    gc.add_argument("--config", help="key=value file (hidden, layers, heads, ...)")
    gc.set_defaults(func=cmd_gradcheck)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _threads(args.threads):
            return args.func(args)
    except UsageError as exc:
        print(f"segtron: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericFailure, FloatingPointError) as exc:
        print(f"segtron: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CorpusError, AlignmentError, SegmentationError, VocabularyError,
            ckpt.CheckpointError, OSError) as exc:
        print(f"segtron: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
