"""Run the full desk-scale context study.

Per training seed: a no-context baseline, a context model bootstrapped
from it, and two from-scratch context models (with and without a
decoder text warm start). Every model is scored on the eval split with
the relevant context sources, per-conversation WERs are pooled across
seeds, and the pooled medians land in CSV/SVG artifacts together with
the perplexity pair of the plain and conversational LMs.

Expect roughly twenty minutes for the default five seeds.
"""

from __future__ import annotations

import argparse
import csv
import statistics
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from convasr import experiment as ex
from convasr.corpus import generate_corpus
from convasr.decode import evaluate
from convasr.model import Recognizer, RnnLm, bootstrap_lm, bootstrap_recognizer
from convasr.report import fnum, write_series_chart
from convasr.tokenizer import train_tokenizer
from convasr.train import (lm_perplexity, prepare_split, pretrain_decoder,
                           train, train_lm)

SOURCES = ("oracle", "predicted", "zero", "random", "scratch", "pretrained")


def run_seed(seed, data, base_cfg, ctx_cfg, tok, corpus, beam):
    cfg = ex.recognizer_train_config(seed)
    base = Recognizer(base_cfg)
    base.init_params(seed)
    train(base, data["train"], data["dev"], cfg)

    ctx = bootstrap_recognizer(base, ctx_cfg, seed)
    train(ctx, data["train"], data["dev"], cfg)

    scratch = Recognizer(ctx_cfg)
    scratch.init_params(seed)
    train(scratch, data["train"], data["dev"], cfg)

    warm = Recognizer(ctx_cfg)
    warm.init_params(seed)
    pretrain_decoder(warm, data["train"], data["dev"], ex.pretrain_config(seed))
    train(warm, data["train"], data["dev"], cfg)

    evals = {
        "zero": evaluate(base, data["eval"], tok, corpus, beam,
                         source="zero", seed=seed),
        "scratch": evaluate(scratch, data["eval"], tok, corpus, beam,
                            source="predicted", seed=seed),
        "pretrained": evaluate(warm, data["eval"], tok, corpus, beam,
                               source="predicted", seed=seed),
    }
    for source in ("oracle", "predicted", "random"):
        evals[source] = evaluate(ctx, data["eval"], tok, corpus, beam,
                                 source=source, seed=seed)
    return evals


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/study", help="artifact directory")
    parser.add_argument("--seeds", type=int, nargs="*",
                        default=list(ex.TRAIN_SEEDS))
    parser.add_argument("--skip-lm", action="store_true",
                        help="skip the language model perplexity pair")
    args = parser.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.time()
    gen, spec = ex.corpus_config()
    corpus = generate_corpus(gen, spec)
    tok = train_tokenizer(corpus.transcripts("train"), ex.BPE_MERGES)
    data = {s: prepare_split(corpus, tok, s) for s in ("train", "dev", "eval")}
    base_cfg = ex.baseline_model_config(tok)
    ctx_cfg = ex.context_model_config(tok, corpus)
    beam = ex.beam_config()

    pooled = {source: [] for source in SOURCES}
    rows = []
    for seed in args.seeds:
        ts = time.time()
        evals = run_seed(seed, data, base_cfg, ctx_cfg, tok, corpus, beam)
        for source in SOURCES:
            ev = evals[source]
            pooled[source].extend(ev.conv_wer.values())
            rows.extend((source, seed, cid, rate)
                        for cid, rate in ev.conv_wer.items())
        line = " ".join(f"{source} {evals[source].median_conv_wer:.3f}"
                        for source in SOURCES)
        print(f"seed {seed}: {line} [{time.time() - ts:.0f}s]", flush=True)

    medians = {source: statistics.median(pooled[source]) for source in SOURCES}
    with (out / "study_wer.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "seed", "conv_id", "wer"])
        for source, seed, cid, rate in rows:
            w.writerow([source, seed, cid, fnum(rate)])
        for source in SOURCES:
            w.writerow([source, "<pooled>", "<median>", fnum(medians[source])])
    with (out / "study_summary.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "pooled_median_conv_wer"])
        for source in SOURCES:
            w.writerow([source, fnum(medians[source])])
    write_series_chart(SOURCES, [medians[s] for s in SOURCES],
                       out / "study_summary.svg",
                       "pooled median conversation WER")

    print("pooled medians:",
          {source: round(medians[source], 4) for source in SOURCES})
    print("ordering oracle<=predicted<=zero<=random:",
          medians["oracle"] <= medians["predicted"]
          <= medians["zero"] <= medians["random"])
    print("warm start no worse than scratch:",
          medians["pretrained"] <= medians["scratch"])

    if not args.skip_lm:
        plain = RnnLm(ex.lm_config(tok))
        plain.init_params(0)
        train_lm(plain, data["train"], data["dev"], ex.lm_train_config())
        conv = bootstrap_lm(plain, ex.conversational_lm_config(tok, corpus), 0)
        train_lm(conv, data["train"], data["dev"],
                 ex.lm_train_config(conversational=True))
        ppl = {"plain": lm_perplexity(plain, data["eval"]),
               "conversational": lm_perplexity(conv, data["eval"])}
        with (out / "study_lm.csv").open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "eval_perplexity"])
            for name, value in ppl.items():
                w.writerow([name, fnum(value)])
        print(f"lm perplexity plain {ppl['plain']:.3f} "
              f"conversational {ppl['conversational']:.3f}")

    print(f"total {time.time() - t0:.0f}s, artifacts in {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
