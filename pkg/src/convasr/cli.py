"""Command line front end.

Subcommands cover the full experiment cycle: corpus generation, unit
learning, recognizer and LM training, decoding, the context-source study,
and report rendering. Every artifact a command writes is appended to
``manifest.jsonl`` in the run directory with its size and SHA-256 digest.

Exit codes: 0 success, 2 usage, 3 invalid configuration or inputs,
4 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import typing
from pathlib import Path

from . import checkpoint as ckpt
from . import corpus as corpus_mod
from . import decode as decode_mod
from . import report as report_mod
from . import train as train_mod
from .ctc import InfeasibleTargetError
from .model import (LmConfig, ModelConfig, ModelConfigError, Recognizer, RnnLm,
                    bootstrap_lm, bootstrap_recognizer, load_lm, load_recognizer,
                    save_lm, save_recognizer)
from .numcore import GradientError, ShapeError
from .tokenizer import TokenizerError, load_tokenizer, save_bpe, save_vocab, train_tokenizer

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4

RUN_DIR_ENV = "CONVASR_RUN_DIR"


class OverrideError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config overrides: repeated --config key=value flags
# ---------------------------------------------------------------------------

def _parse_pairs(pairs) -> dict[str, str]:
    out: dict[str, str] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise OverrideError(f"--config expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        if key in out:
            raise OverrideError(f"duplicate config key {key!r}")
        out[key] = value
    return out


def _coerce(target_type, text: str):
    origin = typing.get_origin(target_type)
    try:
        if origin is tuple:
            parts = [p for p in text.replace(",", " ").split() if p]
            return tuple(int(p) for p in parts)
        if target_type is bool:
            lowered = text.lower()
            if lowered in ("1", "true", "yes"):
                return True
            if lowered in ("0", "false", "no"):
                return False
            raise OverrideError(f"cannot parse boolean from {text!r}")
        if target_type in (int, float, str):
            return target_type(text)
    except ValueError as exc:
        raise OverrideError(f"cannot parse {text!r} as {target_type}") from exc
    raise OverrideError(f"config key has unsupported type {target_type!r}")


def apply_overrides(instance, overrides: dict[str, str]):
    """Return a dataclass copy with the named fields replaced.

    Consumes the keys it uses from ``overrides``.
    """
    hints = typing.get_type_hints(type(instance))
    updates = {}
    for f in dataclasses.fields(instance):
        if f.name in overrides:
            updates[f.name] = _coerce(hints[f.name], overrides.pop(f.name))
    return dataclasses.replace(instance, **updates) if updates else instance


def _reject_leftover(overrides: dict[str, str]):
    if overrides:
        raise OverrideError(f"unknown config keys: {sorted(overrides)}")


# ---------------------------------------------------------------------------
# run directory and manifest
# ---------------------------------------------------------------------------

def resolve_run_dir(args) -> Path:
    out = args.out or os.environ.get(RUN_DIR_ENV) or "runs"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def record_artifact(run_dir: Path, command: str, path: Path):
    data = Path(path).read_bytes()
    entry = {
        "bytes": len(data),
        "command": command,
        "path": str(Path(path).resolve().relative_to(run_dir.resolve())),
        "sha256": hashlib.sha256(data).hexdigest(),
    }
    with (run_dir / "manifest.jsonl").open("a", encoding="utf-8") as handle:
        handle.write(json.dumps(entry, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# shared loading helpers
# ---------------------------------------------------------------------------

def _load_corpus(path) -> corpus_mod.CorpusSet:
    return corpus_mod.load_corpus(path)


def _load_tok(tok_dir):
    d = Path(tok_dir)
    return load_tokenizer(d / "bpe.txt", d / "vocab.txt")


def _prepare(corpus, tok):
    return {split: train_mod.prepare_split(corpus, tok, split)
            for split in corpus_mod.SPLITS}


def _beam_config(args) -> decode_mod.BeamConfig:
    return decode_mod.BeamConfig(beam=args.beam, ctc_weight=args.alpha,
                                 lm_weight=args.beta, length_bonus=args.penalty,
                                 max_len=args.max_len)


def _model_config(corpus, tok, mode: str, overrides) -> ModelConfig:
    base = ModelConfig(
        feature_dim=corpus.spec.feature_dim,
        vocab_size=tok.vocab.size,
        ctx_mode=mode,
        ctx_vocab_size=len(corpus.lexicon) + 1 if mode != "baseline" else 0,
        num_conversations=len(corpus.train) if mode == "att" else 0,
    )
    return apply_overrides(base, overrides)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    run_dir = resolve_run_dir(args)
    overrides = _parse_pairs(args.config)
    sizes = corpus_mod.SplitSizes(
        train=int(overrides.pop("train", 20)),
        dev=int(overrides.pop("dev", 4)),
        eval=int(overrides.pop("eval", 8)),
    )
    gen_cfg = corpus_mod.GeneratorConfig(num_conversations=sizes, seed=args.seed)
    gen_cfg = apply_overrides(gen_cfg, overrides)
    spec = apply_overrides(corpus_mod.FeatureSpec(), overrides)
    _reject_leftover(overrides)
    corpus = corpus_mod.generate_corpus(gen_cfg, spec)
    out = run_dir / "corpus.txt"
    corpus_mod.save_corpus(corpus, out)
    record_artifact(run_dir, "gen", out)
    n_sentences = sum(len(c.sentences) for s in corpus_mod.SPLITS
                      for c in corpus.split(s))
    print(f"wrote {out} ({n_sentences} sentences, lexicon {len(corpus.lexicon)})")
    return EXIT_OK


def cmd_bpe(args) -> int:
    run_dir = resolve_run_dir(args)
    corpus = _load_corpus(args.corpus)
    tok = train_tokenizer(corpus.transcripts("train"), args.merges)
    bpe_path = run_dir / "bpe.txt"
    vocab_path = run_dir / "vocab.txt"
    save_bpe(tok.model, bpe_path)
    save_vocab(tok.vocab, vocab_path)
    record_artifact(run_dir, "bpe", bpe_path)
    record_artifact(run_dir, "bpe", vocab_path)
    print(f"learned {len(tok.model.merges)} merges, vocabulary size {tok.vocab.size}")
    return EXIT_OK


def _train_common(args, pretrain_only: bool) -> int:
    run_dir = resolve_run_dir(args)
    corpus = _load_corpus(args.corpus)
    tok = _load_tok(args.tokenizer)
    overrides = _parse_pairs(args.config)
    train_cfg = train_mod.TrainConfig(seed=args.seed)
    train_cfg = apply_overrides(train_cfg, overrides)

    if args.init:
        model, _ = load_recognizer(args.init)
        if args.mode and args.mode != model.config.ctx_mode:
            raise ModelConfigError(
                f"--init checkpoint is {model.config.ctx_mode!r}, asked for {args.mode!r}")
        model_cfg = apply_overrides(model.config, overrides)
        if model_cfg != model.config:
            raise ModelConfigError("--config cannot reshape an --init checkpoint")
    else:
        mode = args.mode or "baseline"
        model_cfg = _model_config(corpus, tok, mode, overrides)
        if args.lambda_ctc is not None:
            model_cfg = dataclasses.replace(model_cfg, lambda_ctc=args.lambda_ctc)
        if args.bootstrap_from:
            base, _ = load_recognizer(args.bootstrap_from)
            model = bootstrap_recognizer(base, model_cfg, args.seed)
        else:
            model = Recognizer(model_cfg)
            model.init_params(args.seed)
    _reject_leftover(overrides)

    data = _prepare(corpus, tok)
    command = "pretrain" if pretrain_only else "train"
    if pretrain_only:
        result = train_mod.pretrain_decoder(model, data["train"], data["dev"], train_cfg)
        ckpt_path = run_dir / "pretrained.ckpt"
        trace_path = run_dir / "pretrain_trace.csv"
    else:
        result = train_mod.train(model, data["train"], data["dev"], train_cfg)
        ckpt_path = run_dir / "model.ckpt"
        trace_path = run_dir / "trace.csv"
    save_recognizer(model, ckpt_path, extra={
        "command": command, "seed": args.seed, "best_epoch": result.best_epoch,
    })
    report_mod.write_trace_csv(result.trace, trace_path,
                               columns=("epoch", "train_loss", "dev_loss"))
    record_artifact(run_dir, command, ckpt_path)
    record_artifact(run_dir, command, trace_path)
    print(f"{command}: {result.epochs_run} epochs, best epoch {result.best_epoch},"
          f" dev {result.best_dev_metric:.4f} -> {ckpt_path}")
    return EXIT_OK


def cmd_train(args) -> int:
    return _train_common(args, pretrain_only=False)


def cmd_pretrain(args) -> int:
    return _train_common(args, pretrain_only=True)


def cmd_decode(args) -> int:
    run_dir = resolve_run_dir(args)
    corpus = _load_corpus(args.corpus)
    tok = _load_tok(args.tokenizer)
    model, _ = load_recognizer(args.checkpoint)
    lm = load_lm(args.lm)[0] if args.lm else None
    cfg = _beam_config(args)
    data = train_mod.prepare_split(corpus, tok, args.split)
    ev = decode_mod.evaluate(model, data, tok, corpus, cfg,
                             source=args.context_source, lm=lm, seed=args.seed)
    meta = dict(report_mod.beam_meta(cfg), source=args.context_source,
                split=args.split, seed=args.seed)
    stem = f"{args.split}_{args.context_source}"
    wer_path = run_dir / f"wer_{stem}.csv"
    sent_path = run_dir / f"sentences_{stem}.csv"
    nbest_path = run_dir / f"nbest_{stem}.txt"
    report_mod.write_wer_csv([ev], wer_path, meta)
    report_mod.write_sentences_csv(ev.sentences, sent_path, meta)
    report_mod.write_nbest(ev.sentences, nbest_path, meta)
    for p in (wer_path, sent_path, nbest_path):
        record_artifact(run_dir, "decode", p)
    print(f"decode[{args.context_source}] {args.split}: wer {ev.wer:.4f},"
          f" median conversation wer {ev.median_conv_wer:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    run_dir = resolve_run_dir(args)
    corpus = _load_corpus(args.corpus)
    tok = _load_tok(args.tokenizer)
    model, _ = load_recognizer(args.checkpoint)
    baseline = load_recognizer(args.baseline_checkpoint)[0] if args.baseline_checkpoint else None
    lm = load_lm(args.lm)[0] if args.lm else None
    cfg = _beam_config(args)
    data = train_mod.prepare_split(corpus, tok, args.split)
    evals = []
    for source in decode_mod.CONTEXT_SOURCES:
        decoder = baseline if (source == "zero" and baseline is not None) else model
        ev = decode_mod.evaluate(decoder, data, tok, corpus, cfg, source=source,
                                 lm=lm, seed=args.seed)
        evals.append(ev)
        nbest_path = run_dir / f"nbest_{args.split}_{source}.txt"
        report_mod.write_nbest(ev.sentences, nbest_path,
                               dict(report_mod.beam_meta(cfg), source=source))
        record_artifact(run_dir, "ablate", nbest_path)
        print(f"ablate[{source}]: median conversation wer {ev.median_conv_wer:.4f}")
    meta = dict(report_mod.beam_meta(cfg), split=args.split, seed=args.seed)
    csv_path = run_dir / f"ablation_{args.split}.csv"
    svg_path = run_dir / f"ablation_{args.split}.svg"
    report_mod.write_wer_csv(evals, csv_path, meta)
    report_mod.write_wer_chart(evals, svg_path)
    record_artifact(run_dir, "ablate", csv_path)
    record_artifact(run_dir, "ablate", svg_path)
    return EXIT_OK


def cmd_lm(args) -> int:
    run_dir = resolve_run_dir(args)
    corpus = _load_corpus(args.corpus)
    tok = _load_tok(args.tokenizer)
    overrides = _parse_pairs(args.config)
    train_cfg = apply_overrides(train_mod.TrainConfig(seed=args.seed), overrides)
    data = _prepare(corpus, tok)

    if args.eval_only:
        lm, _ = load_lm(args.eval_only)
        _reject_leftover(overrides)
        ppl = train_mod.lm_perplexity(lm, data["eval"])
        print(f"eval perplexity {ppl:.4f}")
        return EXIT_OK

    cfg = LmConfig(vocab_size=tok.vocab.size, conversational=args.conversational,
                   ctx_vocab_size=len(corpus.lexicon) + 1 if args.conversational else 0)
    cfg = apply_overrides(cfg, overrides)
    _reject_leftover(overrides)
    if args.bootstrap_from:
        base, _ = load_lm(args.bootstrap_from)
        lm = bootstrap_lm(base, cfg, args.seed)
    else:
        lm = RnnLm(cfg)
        lm.init_params(args.seed)
    result = train_mod.train_lm(lm, data["train"], data["dev"], train_cfg)
    ppl = train_mod.lm_perplexity(lm, data["eval"])
    name = "lm_conv" if args.conversational else "lm_plain"
    ckpt_path = run_dir / f"{name}.ckpt"
    trace_path = run_dir / f"{name}_trace.csv"
    save_lm(lm, ckpt_path, extra={"seed": args.seed, "eval_ppl": ppl})
    report_mod.write_trace_csv(result.trace, trace_path,
                               columns=("epoch", "train_ppl", "dev_ppl"))
    record_artifact(run_dir, "lm", ckpt_path)
    record_artifact(run_dir, "lm", trace_path)
    print(f"lm[{'conversational' if args.conversational else 'plain'}]:"
          f" dev {result.best_dev_metric:.4f}, eval perplexity {ppl:.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = resolve_run_dir(args)
    rows: list[tuple[str, float]] = []
    for path in args.inputs:
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) >= 3 and parts[1] == "<median>":
                rows.append((parts[0], float(parts[2])))
    if not rows:
        raise OverrideError("no <median> rows found in the input files")
    csv_path = run_dir / "summary.csv"
    svg_path = run_dir / "summary.svg"
    with csv_path.open("w", encoding="utf-8", newline="") as handle:
        handle.write("source,median_conv_wer\n")
        for source, value in rows:
            handle.write(f"{source},{report_mod.fnum(value)}\n")
    report_mod.write_series_chart([r[0] for r in rows], [r[1] for r in rows],
                                  svg_path, "median conversation WER")
    record_artifact(run_dir, "report", csv_path)
    record_artifact(run_dir, "report", svg_path)
    print(f"wrote {csv_path} and {svg_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(sp, out_help="output directory (default $CONVASR_RUN_DIR or ./runs)"):
    sp.add_argument("--out", default=None, help=out_help)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--config", action="append", metavar="KEY=VALUE",
                    help="override a config field; repeatable")


def _add_beam(sp):
    sp.add_argument("--beam", type=int, default=10)
    sp.add_argument("--alpha", type=float, default=0.3,
                    help="CTC weight in the decode score")
    sp.add_argument("--beta", type=float, default=0.3,
                    help="LM weight in the decode score")
    sp.add_argument("--penalty", type=float, default=0.5,
                    help="per-unit length bonus added to finished hypotheses")
    sp.add_argument("--max-len", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convasr",
        description="conversation-context speech recognition experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen", help="generate a synthetic conversation corpus")
    _add_common(sp)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("bpe", help="learn subword units from the train split")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--merges", type=int, default=600)
    _add_common(sp)
    sp.set_defaults(func=cmd_bpe)

    for name, help_text in (("train", "train a recognizer"),
                            ("pretrain", "pretrain the decoder on transcripts")):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--corpus", required=True)
        sp.add_argument("--tokenizer", required=True,
                        help="directory with bpe.txt and vocab.txt")
        sp.add_argument("--mode", choices=("baseline", "mean", "att"), default=None)
        sp.add_argument("--init", default=None,
                        help="checkpoint to continue training from")
        sp.add_argument("--bootstrap-from", default=None,
                        help="no-context checkpoint to start a context model from")
        sp.add_argument("--lambda", dest="lambda_ctc", type=float, default=None,
                        help="CTC weight in the training objective")
        _add_common(sp)
        sp.set_defaults(func=cmd_train if name == "train" else cmd_pretrain)

    sp = sub.add_parser("decode", help="beam decode one split")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--tokenizer", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--lm", default=None)
    sp.add_argument("--split", choices=corpus_mod.SPLITS, default="eval")
    sp.add_argument("--context-source", choices=decode_mod.CONTEXT_SOURCES,
                    default="predicted")
    _add_beam(sp)
    _add_common(sp)
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("ablate", help="decode under every context source")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--tokenizer", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--baseline-checkpoint", default=None,
                    help="no-context model to decode the zero source with")
    sp.add_argument("--lm", default=None)
    sp.add_argument("--split", choices=corpus_mod.SPLITS, default="eval")
    _add_beam(sp)
    _add_common(sp)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("lm", help="train or evaluate a unit language model")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--tokenizer", required=True)
    sp.add_argument("--conversational", action="store_true")
    sp.add_argument("--bootstrap-from", default=None)
    sp.add_argument("--eval-only", default=None, metavar="CHECKPOINT")
    _add_common(sp)
    sp.set_defaults(func=cmd_lm)

    sp = sub.add_parser("report", help="merge decode summaries into one chart")
    sp.add_argument("inputs", nargs="+", help="wer CSV files from decode or ablate")
    _add_common(sp)
    sp.set_defaults(func=cmd_report)

    return parser


VALIDATION_ERRORS = (corpus_mod.CorpusError, TokenizerError, ModelConfigError,
                     ckpt.CheckpointError, decode_mod.DecodeError, OverrideError,
                     ShapeError, FileNotFoundError)
RUNTIME_ERRORS = (train_mod.TrainingError, GradientError, InfeasibleTargetError,
                  OSError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except RUNTIME_ERRORS as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
