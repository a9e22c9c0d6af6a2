"""Command-line entry point: tokenize, train, eval, predict, gradcheck, ablate, sweep, weights."""

from __future__ import annotations

import argparse
import dataclasses
import difflib
import logging
import sys
from pathlib import Path

import numpy as np

from . import synthetic
from . import tensor as T
from .adapters import AlignmentError, EmptyUtteranceError, format_attention
from .dataset import DataFormatError, batch_iter, load_split
from .metrics import MetricsAlignmentError, TagFormatError
from .model import ConfigurationError, JointModel, gradient_check_batch
from .trainer import (
    REFERENCE_EPOCHS,
    CheckpointError,
    ConfigFileError,
    Corpus,
    TrainConfig,
    checkpoint_from,
    epoch_sweep,
    evaluate_model,
    format_table,
    load_checkpoint,
    load_config,
    run_ablations,
    save_checkpoint,
    train,
)
from .wordpiece import EmptyInputError, TruncationError, VocabError, WordpieceVocab, tokenize_utterance

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("tokenize", "train", "eval", "predict", "gradcheck", "ablate", "sweep", "weights")
DATA_ERRORS = (DataFormatError, VocabError, TruncationError, ConfigFileError, CheckpointError,
               TagFormatError, MetricsAlignmentError, AlignmentError, EmptyUtteranceError,
               EmptyInputError, ConfigurationError, FileNotFoundError, IsADirectoryError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        hint = ""
        if "invalid choice" in message:
            bad = message.split("'")[1] if "'" in message else ""
            close = difflib.get_close_matches(bad, COMMANDS, n=1)
            if close:
                hint = f" (did you mean '{close[0]}'?)"
        elif "unrecognized arguments" in message:
            flags = [a for a in message.split(":", 1)[1].split() if a.startswith("--")]
            known = [o for a in self._actions for o in a.option_strings]
            for f in flags:
                close = difflib.get_close_matches(f.split("=")[0], known, n=1)
                if close:
                    hint = f" (did you mean '{close[0]}'?)"
                    break
        raise UsageError(f"{self.prog}: {message}{hint}")


def _vocab(args) -> WordpieceVocab:
    path = args.vocab or synthetic.bundled_vocab_path()
    return WordpieceVocab.from_file(path)


def _config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _corpus(args) -> Corpus:
    data = args.data or synthetic.bundled_dir()
    return Corpus.from_dir(data, _vocab(args))


def cmd_tokenize(args, out):
    vocab = _vocab(args)
    tok = tokenize_utterance([w.lower() for w in args.text.split()], vocab)
    for j, word in enumerate(tok.words):
        s, e = tok.alignment.spans[j]
        out.write(f"{word} → {' '.join(tok.word_pieces(j))}\t[{s},{e})\n")
    return EXIT_OK


def cmd_train(args, out):
    cfg = _config(args)
    corpus = _corpus(args)
    result = train(corpus, cfg)
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    save_checkpoint(checkpoint_from(result, cfg, corpus, "best"), dest / "best.ckpt")
    save_checkpoint(checkpoint_from(result, cfg, corpus, "last"), dest / "last.ckpt")
    (dest / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    lines = ["epoch\ttrain_loss\tintent_acc\tslot_p\tslot_r\tslot_f1\toverall_acc"]
    for rec in result.history:
        metrics = rec.valid.machine_line() if rec.valid else "\t".join(["-"] * 5)
        lines.append(f"{rec.epoch}\t{rec.train_loss:.6f}\t{metrics}")
    (dest / "history.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    out.write(f"best epoch {result.best_epoch} of {len(result.history)}; "
              f"checkpoint {dest / 'best.ckpt'}\n")
    return EXIT_OK


def cmd_eval(args, out):
    ckpt = load_checkpoint(args.checkpoint)
    vocab, catalog = ckpt.vocab(), ckpt.label_catalog()
    model = ckpt.build_model()
    data = load_split(args.data or synthetic.bundled_dir(), args.split)
    report = evaluate_model(model, data, vocab, catalog)
    out.write(report.machine_line() + "\n")
    out.write(report.summary())
    if catalog.unseen["slot"] or catalog.unseen["intent"]:
        out.write(f"unseen labels  slot={catalog.unseen['slot']} intent={catalog.unseen['intent']}\n")
    return EXIT_OK


def _require_text(args):
    if not args.text or not args.text.split():
        raise EmptyUtteranceError("--text is empty")


def cmd_predict(args, out):
    _require_text(args)
    ckpt = load_checkpoint(args.checkpoint)
    pred = ckpt.build_model().predict(args.text, ckpt.vocab(), ckpt.label_catalog())
    out.write(pred.format())
    return EXIT_OK


def cmd_weights(args, out):
    _require_text(args)
    ckpt = load_checkpoint(args.checkpoint)
    pred = ckpt.build_model().predict(args.text, ckpt.vocab(), ckpt.label_catalog())
    out.write(format_attention(pred.attention))
    return EXIT_OK


def cmd_gradcheck(args, out):
    cfg = dataclasses.replace(_config(args), dropout=0.0)
    corpus = _corpus(args)
    model = JointModel(cfg.model_config(len(corpus.vocab), corpus.catalog), seed=cfg.seed)
    batch = gradcheck_batch(corpus)
    report = gradient_check_batch(model, batch, eps=args.eps, max_entries=args.entries,
                                  rng=np.random.default_rng(cfg.seed))
    for name, err in report.max_rel_err.items():
        out.write(f"{name}\t{err:.3e}\t({report.checked[name]} entries)\n")
    ok = report.passed(args.tol)
    out.write(f"max\t{report.worst:.3e}\t{'PASS' if ok else 'FAIL'} (tol {args.tol:g})\n")
    return EXIT_OK if ok else EXIT_NUMERIC


def gradcheck_batch(corpus: Corpus):
    """Two training utterances, the first of which has a multi-piece word."""
    batches, _ = batch_iter(corpus.train, corpus.vocab, corpus.catalog, 1)
    multi = [b for b in batches if b.alignments[0].complex_words()]
    if not multi:
        raise DataFormatError("training split has no multi-piece word")
    first = multi[0].utterances[0]
    second = next(u for u in corpus.train if u is not first)
    batches, _ = batch_iter([first, second], corpus.vocab, corpus.catalog, 2)
    return batches[0]


def cmd_ablate(args, out):
    cfg = _config(args)
    rows = run_ablations(_corpus(args), cfg, args.variants or None, jobs=args.jobs, split=args.split)
    out.write(format_table(rows, "variant"))
    return EXIT_OK


def cmd_sweep(args, out):
    cfg = _config(args)
    epochs = [int(e) for e in args.epochs.split(",")] if args.epochs else list(REFERENCE_EPOCHS)
    rows = epoch_sweep(_corpus(args), cfg, epochs, jobs=args.jobs, split=args.split)
    out.write(format_table(rows, "epochs"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="joint-nlu", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def add(name, fn, help_text, *flags):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=fn)
        for f in flags:
            f(p)
        return p

    def config(p):
        p.add_argument("--config", help="key = value config file (defaults if omitted)")

    def data(p):
        p.add_argument("--data", help="dataset root with train/valid/test dirs (default: bundled synthetic corpus)")

    def vocab(p):
        p.add_argument("--vocab", help="wordpiece vocab, one token per line (default: bundled vocab)")

    def seed(p):
        p.add_argument("--seed", type=int, help="overrides the config seed")

    def jobs(p):
        p.add_argument("--jobs", type=int, default=1, help="parallel independent runs (default 1)")

    def split(default):
        def f(p):
            p.add_argument("--split", default=default, help=f"split to score (default {default})")
        return f

    def checkpoint(p):
        p.add_argument("--checkpoint", required=True, help="checkpoint written by train")

    def text(p):
        p.add_argument("--text", required=True, help="whitespace-separated utterance")

    add("tokenize", cmd_tokenize, "print wordpieces and sub-token spans per word", vocab, text)
    p = add("train", cmd_train, "train and write best/last checkpoints", config, data, vocab, seed)
    p.add_argument("--out", required=True, help="output directory")
    add("eval", cmd_eval, "score a checkpoint on a split", checkpoint, data, split("test"))
    add("predict", cmd_predict, "predict intent and per-word slots", checkpoint, text)
    p = add("gradcheck", cmd_gradcheck, "finite-difference check of the full model", config, data, vocab, seed)
    p.add_argument("--eps", type=float, default=1e-4, help="finite-difference step (default 1e-4)")
    p.add_argument("--tol", type=float, default=1e-3, help="max relative error (default 1e-3)")
    p.add_argument("--entries", type=int, default=128,
                   help="coordinates probed per parameter tensor; 0 probes all (default 128)")
    p = add("ablate", cmd_ablate, "train every ablation variant from one seed", config, data, vocab,
            seed, jobs, split("test"))
    p.add_argument("--variants", nargs="*", help="subset of: full, 'w/o IAA', 'w/o SAA', "
                                                  "'w/o intent feature', 'slot only'")
    p = add("sweep", cmd_sweep, "one training run per epoch budget", config, data, vocab, seed, jobs,
            split("test"))
    p.add_argument("--epochs", help="comma-separated epoch budgets (default 10,30,40,60,80,100)")
    add("weights", cmd_weights, "dump sub-word attention weights as TSV", checkpoint, text)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    if args.command == "gradcheck" and args.entries == 0:
        args.entries = None
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args, out)
    except T.NumericError as exc:
        sys.stderr.write(f"numeric error: {exc}\n")
        return EXIT_NUMERIC
    except DATA_ERRORS as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA


def main_exit() -> None:
    sys.exit(main())
