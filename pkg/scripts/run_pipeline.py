"""Drive the command-line pipeline end to end in one run directory.

Generates the study corpus, fits the tokenizer, trains a baseline and a
bootstrapped context model, then decodes the eval split once per
context source and merges the medians into a summary table. A trimmed
schedule keeps the default invocation inside a coffee break; pass
--full for the study-length schedule.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from convasr import experiment as ex
from convasr.cli import main as cli


def config_args(cfg, fields) -> list[str]:
    out = []
    for name in fields:
        value = getattr(cfg, name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        out.extend(["--config", f"{name}={value}"])
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/pipeline")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--full", action="store_true",
                        help="use the full study training schedule")
    args = parser.parse_args(argv)
    run = str(Path(args.out))
    seed = ["--seed", str(args.seed)]

    gen, spec = ex.corpus_config()
    splits = gen.num_conversations
    gen_args = (["gen", "--out", run, "--seed", str(gen.seed)]
                + ["--config", f"train={splits.train}",
                   "--config", f"dev={splits.dev}",
                   "--config", f"eval={splits.eval}"]
                + config_args(gen, ("sentences_per_conversation",
                                    "words_per_sentence", "lexicon_size",
                                    "word_length", "topic_count",
                                    "topic_word_fraction"))
                + config_args(spec, ("feature_dim", "frames_per_word",
                                     "noise_sigma", "confusable_fraction")))

    tcfg = ex.recognizer_train_config(args.seed)
    if not args.full:
        tcfg = dataclasses.replace(tcfg, epochs=60, min_epochs=20, patience=8)
    model_args = []
    for name, value in ex.MODEL_DIMS.items():
        model_args.extend(["--config", f"{name}={value}"])
    train_args = config_args(tcfg, ("epochs", "batch_size", "patience",
                                    "min_epochs", "clip_norm", "eps"))

    corpus = [run + "/corpus.txt"]
    steps = [
        gen_args,
        ["bpe", "--corpus"] + corpus + ["--out", run,
                                        "--merges", str(ex.BPE_MERGES)],
        ["train", "--corpus"] + corpus + ["--tokenizer", run, "--out", run]
        + seed + model_args + train_args,
        ["train", "--corpus"] + corpus + ["--tokenizer", run,
                                          "--out", run + "/ctx",
                                          "--mode", "mean",
                                          "--bootstrap-from", run + "/model.ckpt"]
        + seed + model_args + train_args,
        ["ablate", "--corpus"] + corpus + ["--tokenizer", run,
                                           "--checkpoint", run + "/ctx/model.ckpt",
                                           "--baseline-checkpoint", run + "/model.ckpt",
                                           "--out", run + "/ablation"] + seed,
        ["report", run + "/ablation/ablation_eval.csv", "--out", run],
    ]
    for step in steps:
        print("convasr " + " ".join(step), flush=True)
        code = cli(step)
        if code != 0:
            print(f"step failed with exit code {code}", file=sys.stderr)
            return code
    print(f"done, summary in {run}/summary.csv")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
