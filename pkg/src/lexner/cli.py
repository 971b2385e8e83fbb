"""Command-line entry point: train, eval, predict, and sweep subcommands.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure
during training.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import fields

import numpy as np

from . import checkpoint as ckpt
from . import decode
from .autodiff import ConfigError
from .config import RunConfig, _coerce, load_config
from .corpus import NONE_LABEL, PAD, UNK, ParseError, Sentence, Vocab, \
    load_embeddings, read_corpus
from .lexicon import Lexicon
from .model import Model, train_model, _prepare, _score
from .optim import DivergenceError


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="key = value configuration file")
    for f in fields(RunConfig):
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name,
                            default=None, metavar="V")


def _collect(args) -> tuple[RunConfig, set[str]]:
    overrides = {}
    for f in fields(RunConfig):
        raw = getattr(args, f.name, None)
        if raw is not None:
            overrides[f.name] = _coerce(f.name, raw) if isinstance(raw, str) else raw
    return load_config(args.config, overrides)


def _require_file(path: str, what: str):
    if not path:
        raise ConfigError(f"no {what} path configured")
    try:
        open(path, "rb").close()
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path!r}: {exc}") from None


def _load_checkpoint(path: str):
    _require_file(path, "checkpoint")
    model, extra = ckpt.load(path)
    words = [w for w in model.vocab.lex.symbols if w not in (PAD, UNK)]
    freqs = {k: float(v) for k, v in extra.get("lex_freqs", {}).items()}
    lex = Lexicon(words, freqs) if words else None
    return model, extra, lex


def _predict_sets(model, prepared, rho, nested):
    out = []
    for item in prepared:
        spans = decode.resolve(decode.filter_threshold(_score(model, item), rho),
                               nested)
        out.append(spans)
    return out


# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg, _ = _collect(args)
    _require_file(cfg.train, "training corpus")
    if cfg.use_lexicon:
        _require_file(cfg.lexicon, "lexicon")
    train_sents = read_corpus(cfg.train, cfg.corpus_format, cfg.max_sentence_len)
    dev_sents = (read_corpus(cfg.dev, cfg.corpus_format, cfg.max_sentence_len)
                 if cfg.dev else [])
    lex = Lexicon.from_file(cfg.lexicon) if cfg.use_lexicon else None
    vocab = Vocab.build(train_sents + dev_sents, lex.words if lex else [])
    rng = np.random.default_rng(cfg.seed)
    mc = cfg.model_config()
    char_emb = lex_emb = None
    if cfg.char_embeddings:
        char_emb, _ = load_embeddings(cfg.char_embeddings, vocab.chars,
                                      mc.d_char, rng, reserved_rows=2)
    if cfg.lex_embeddings:
        lex_emb, _ = load_embeddings(cfg.lex_embeddings, vocab.lex,
                                     mc.d_lex, rng, reserved_rows=2)
    model = Model.build(mc, vocab, rng, lex_embeddings=lex_emb,
                        char_embeddings=char_emb)
    best, rows = train_model(model, train_sents, dev_sents, lex,
                             cfg.train_settings(),
                             log_fn=lambda r: print(
                                 f"epoch {r.epoch} [{r.split}] "
                                 f"P={r.precision:.4f} R={r.recall:.4f} "
                                 f"F1={r.f1:.4f} loss={r.loss:.6f}"))
    model.restore(best)
    extra = {"run_config": {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}}
    if lex is not None and lex.freqs:
        extra["lex_freqs"] = lex.freqs
    ckpt.save(cfg.checkpoint, model, extra)
    with open(cfg.log, "w", encoding="utf-8") as fh:
        fh.write("epoch,split,P,R,F1,loss\n")
        for r in rows:
            fh.write(f"{r.epoch},{r.split},{r.precision:.6f},{r.recall:.6f},"
                     f"{r.f1:.6f},{r.loss:.8f}\n")
    print(f"wrote {cfg.checkpoint} and {cfg.log}")
    return 0


def cmd_eval(args) -> int:
    cfg, explicit = _collect(args)
    model, extra, lex = _load_checkpoint(cfg.checkpoint)
    ckpt.check_structure(cfg.model_config(), model.config, explicit)
    path = {"train": cfg.train, "dev": cfg.dev, "test": cfg.test}[args.split]
    _require_file(path, f"{args.split} corpus")
    sents = read_corpus(path, cfg.corpus_format, cfg.max_sentence_len)
    active_lex = lex if cfg.use_lexicon else None
    prepared = [_prepare(model, s, active_lex) for s in sents]
    preds = _predict_sets(model, prepared, cfg.rho, cfg.nested)
    pred_sets = [{s.key() for s in ps} for ps in preds]
    gold_sets = [s.entities for s in sents]
    p, r, f1 = decode.evaluate(pred_sets, gold_sets)
    print(f"micro P={100 * p:.2f} R={100 * r:.2f} F1={100 * f1:.2f}")
    for etype, (tp, tr, tf) in decode.evaluate_by_type(pred_sets, gold_sets).items():
        print(f"{etype}: P={100 * tp:.2f} R={100 * tr:.2f} F1={100 * tf:.2f}")
    return 0


def _read_raw(path: str) -> list[Sentence]:
    sents = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            text = line.rstrip("\n")
            if not text:
                continue
            chars = list(text)
            sents.append(Sentence(chars, ["S"] * len(chars), [UNK] * len(chars)))
    return sents


def cmd_predict(args) -> int:
    cfg, _ = _collect(args)
    model, extra, lex = _load_checkpoint(cfg.checkpoint)
    path = args.input or cfg.test
    _require_file(path, "input")
    if args.raw:
        sents = _read_raw(path)
        have_gold = False
    else:
        sents = read_corpus(path, cfg.corpus_format, cfg.max_sentence_len)
        have_gold = any(s.entities for s in sents)
    active_lex = lex if cfg.use_lexicon else None
    prepared = [_prepare(model, s, active_lex) for s in sents]
    lines = []
    pred_sets = []
    for sid, item in enumerate(prepared):
        scored = _score(model, item, want_attention=args.dump_attention)
        kept = decode.resolve(decode.filter_threshold(scored, cfg.rho), cfg.nested)
        pred_sets.append({s.key() for s in kept})
        for s in kept:
            lines.append(f"{sid}\t{s.start}\t{s.end}\t{s.type}\t{s.prob:.6f}")
            if args.dump_attention and s.attention is not None:
                weights, labels = s.attention
                ws = " ".join(f"{wv:.6f}" for wv in weights)
                lines.append(f"#attn\t{sid}\t{s.start}\t{s.end}\t{ws}\t"
                             + "|".join(labels))
    if have_gold:
        p, r, f1 = decode.evaluate(pred_sets, [s.entities for s in sents])
        lines.append(f"# micro P={100 * p:.2f} R={100 * r:.2f} F1={100 * f1:.2f}")
    out = args.output_file or cfg.output
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
    print(f"wrote {out} ({sum(len(p) for p in pred_sets)} entities)")
    return 0


def cmd_sweep(args) -> int:
    cfg, _ = _collect(args)
    _require_file(cfg.dev, "dev corpus")
    rhos = [float(x) for x in args.rhos.split(",")] if args.rhos else \
        [round(0.1 * i, 1) for i in range(10)]
    out_rows = ["gamma,rho,F1"]
    for path in args.checkpoints:
        model, extra, lex = _load_checkpoint(path)
        sents = read_corpus(cfg.dev, cfg.corpus_format, cfg.max_sentence_len)
        active_lex = lex if cfg.use_lexicon else None
        prepared = [_prepare(model, s, active_lex) for s in sents]
        scored = [_score(model, item) for item in prepared]
        golds = [s.entities for s in sents]
        for rho in rhos:
            preds = [{s.key() for s in decode.resolve(
                decode.filter_threshold(sc, rho), cfg.nested)} for sc in scored]
            _, _, f1 = decode.evaluate(preds, golds)
            out_rows.append(f"{model.config.gamma},{rho},{f1:.6f}")
    text = "\n".join(out_rows) + "\n"
    if args.output_file:
        with open(args.output_file, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lexner",
        description="Fragment-based named entity recognizer with a "
                    "lexicon-memory attention model.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _add_common(p_eval)
    p_eval.add_argument("--split", choices=["train", "dev", "test"],
                        default="test")
    p_eval.set_defaults(func=cmd_eval)

    p_pred = sub.add_parser("predict", help="emit entities for an input file")
    _add_common(p_pred)
    p_pred.add_argument("--input", help="input file (defaults to the test path)")
    p_pred.add_argument("--raw", action="store_true",
                        help="input is plain text, one sentence per line")
    p_pred.add_argument("--dump-attention", action="store_true")
    p_pred.add_argument("--output-file", help="output path (defaults to config)")
    p_pred.set_defaults(func=cmd_predict)

    p_sweep = sub.add_parser("sweep", help="dev F1 over a decoding threshold grid")
    _add_common(p_sweep)
    p_sweep.add_argument("--checkpoints", nargs="+", required=True)
    p_sweep.add_argument("--rhos", help="comma-separated threshold list")
    p_sweep.add_argument("--output-file")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
