import dataclasses
import hashlib
import json
from pathlib import Path

import pytest

from convasr.cli import (
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_USAGE,
    EXIT_VALIDATION,
    RUN_DIR_ENV,
    OverrideError,
    apply_overrides,
    main,
)
from convasr.corpus import GeneratorConfig
from convasr.train import TrainConfig

GEN_ARGS = [
    "--config", "train=2", "--config", "dev=1", "--config", "eval=1",
    "--config", "sentences_per_conversation=2,3",
    "--config", "words_per_sentence=1,2",
    "--config", "lexicon_size=8", "--config", "word_length=3,4",
    "--config", "topic_count=2", "--config", "topic_word_fraction=1.0",
    "--config", "feature_dim=4", "--config", "frames_per_word=4,5",
    "--config", "confusable_fraction=0.5",
]
MODEL_ARGS = [
    "--config", "enc_hidden=5", "--config", "enc_proj=5",
    "--config", "dec_hidden=5", "--config", "embed_dim=4",
    "--config", "attn_dim=4", "--config", "attn_filters=2",
    "--config", "attn_kernel=3", "--config", "ctx_dim=4",
]
TRAIN_ARGS = ["--config", "epochs=1", "--config", "batch_size=2",
              "--config", "eps=1e-4"]
BEAM_ARGS = ["--beam", "2", "--max-len", "3", "--beta", "0.0"]


def read_manifest(run_dir: Path):
    lines = (run_dir / "manifest.jsonl").read_text(encoding="utf-8").splitlines()
    return [json.loads(line) for line in lines]


def data_lines(path: Path):
    return [l for l in path.read_text(encoding="utf-8").splitlines()
            if l and not l.startswith("#")]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen + bpe + baseline train + context train, shared by the read-only tests."""
    root = tmp_path_factory.mktemp("cli")
    run = root / "run"
    assert main(["gen", "--out", str(run), "--seed", "3"] + GEN_ARGS) == EXIT_OK
    corpus = run / "corpus.txt"
    assert main(["bpe", "--corpus", str(corpus), "--out", str(run)]) == EXIT_OK
    assert main(["train", "--corpus", str(corpus), "--tokenizer", str(run),
                 "--out", str(run)] + MODEL_ARGS + TRAIN_ARGS) == EXIT_OK
    ctx_run = root / "ctx"
    assert main(["train", "--corpus", str(corpus), "--tokenizer", str(run),
                 "--out", str(ctx_run), "--mode", "mean", "--bootstrap-from",
                 str(run / "model.ckpt")] + MODEL_ARGS + TRAIN_ARGS) == EXIT_OK
    return {"run": run, "ctx": ctx_run, "corpus": corpus}


# ---------------------------------------------------------------------------
# overrides
# ---------------------------------------------------------------------------

def test_apply_overrides_coerces_field_types():
    cfg = apply_overrides(GeneratorConfig(), {
        "lexicon_size": "9",
        "topic_word_fraction": "0.25",
        "words_per_sentence": "2,4",
    })
    assert cfg.lexicon_size == 9
    assert cfg.topic_word_fraction == 0.25
    assert cfg.words_per_sentence == (2, 4)


def test_apply_overrides_consumes_only_known_keys():
    leftovers = {"epochs": "4", "mystery": "1"}
    cfg = apply_overrides(TrainConfig(), leftovers)
    assert cfg.epochs == 4
    assert leftovers == {"mystery": "1"}


def test_bad_override_values_raise():
    with pytest.raises(OverrideError):
        apply_overrides(TrainConfig(), {"epochs": "four"})
    with pytest.raises(OverrideError):
        apply_overrides(GeneratorConfig(), {"words_per_sentence": "2,x"})


def test_override_error_paths_exit_validation(tmp_path):
    assert main(["gen", "--out", str(tmp_path), "--config", "nonsense"]) == \
        EXIT_VALIDATION
    assert main(["gen", "--out", str(tmp_path), "--config", "no_such_key=1"]) == \
        EXIT_VALIDATION
    assert main(["gen", "--out", str(tmp_path), "--config", "seed=1",
                 "--config", "seed=2"]) == EXIT_VALIDATION


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------

def test_usage_errors_exit_2():
    assert main([]) == EXIT_USAGE
    assert main(["decode"]) == EXIT_USAGE
    assert main(["gen", "--no-such-flag"]) == EXIT_USAGE


def test_missing_input_exits_validation(tmp_path):
    assert main(["bpe", "--corpus", str(tmp_path / "nope.txt"),
                 "--out", str(tmp_path)]) == EXIT_VALIDATION


def test_invalid_config_exits_validation(tmp_path):
    assert main(["gen", "--out", str(tmp_path),
                 "--config", "topic_count=0"]) == EXIT_VALIDATION


def test_infeasible_training_exits_runtime(tmp_path):
    # one frame per word cannot carry one unit per word after 2x stacking
    run = tmp_path / "run"
    swaps = {"frames_per_word=4,5": "frames_per_word=1,1",
             "words_per_sentence=1,2": "words_per_sentence=2,3"}
    args = [swaps.get(a, a) for a in GEN_ARGS]
    assert main(["gen", "--out", str(run), "--seed", "0"] + args) == EXIT_OK
    assert main(["bpe", "--corpus", str(run / "corpus.txt"), "--out", str(run)]) == EXIT_OK
    assert main(["train", "--corpus", str(run / "corpus.txt"), "--tokenizer",
                 str(run), "--out", str(run)] + MODEL_ARGS + TRAIN_ARGS) == EXIT_RUNTIME


# ---------------------------------------------------------------------------
# artifacts and manifest
# ---------------------------------------------------------------------------

def test_pipeline_artifacts_exist(pipeline):
    run = pipeline["run"]
    for name in ("corpus.txt", "bpe.txt", "vocab.txt", "model.ckpt", "trace.csv"):
        assert (run / name).exists(), name


def test_manifest_records_hashes_of_written_files(pipeline):
    run = pipeline["run"]
    entries = read_manifest(run)
    assert {e["command"] for e in entries} >= {"gen", "bpe", "train"}
    for e in entries:
        assert set(e) == {"bytes", "command", "path", "sha256"}
        target = run / e["path"]
        data = target.read_bytes()
        assert len(data) == e["bytes"]
        assert hashlib.sha256(data).hexdigest() == e["sha256"]


def test_gen_is_deterministic_across_directories(pipeline, tmp_path):
    rerun = tmp_path / "again"
    assert main(["gen", "--out", str(rerun), "--seed", "3"] + GEN_ARGS) == EXIT_OK
    first = read_manifest(pipeline["run"])[0]
    second = read_manifest(rerun)[0]
    assert first["sha256"] == second["sha256"]
    assert first["bytes"] == second["bytes"]


def test_run_dir_env_var_is_honored(pipeline, tmp_path, monkeypatch):
    target = tmp_path / "envrun"
    monkeypatch.setenv(RUN_DIR_ENV, str(target))
    assert main(["gen", "--seed", "3"] + GEN_ARGS) == EXIT_OK
    assert (target / "corpus.txt").exists()


# ---------------------------------------------------------------------------
# decode, ablate, report
# ---------------------------------------------------------------------------

def decode_into(pipeline, out: Path, *extra):
    return main(["decode", "--corpus", str(pipeline["corpus"]),
                 "--tokenizer", str(pipeline["run"]),
                 "--checkpoint", str(pipeline["run"] / "model.ckpt"),
                 "--out", str(out)] + BEAM_ARGS + list(extra))


def test_decode_writes_tables_and_nbest(pipeline, tmp_path):
    out = tmp_path / "dec"
    assert decode_into(pipeline, out) == EXIT_OK
    assert (out / "wer_eval_predicted.csv").exists()
    assert (out / "sentences_eval_predicted.csv").exists()
    assert (out / "nbest_eval_predicted.txt").exists()
    rows = data_lines(out / "wer_eval_predicted.csv")
    assert any("<median>" in r for r in rows)
    assert any("<all>" in r for r in rows)


def test_decode_is_deterministic(pipeline, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert decode_into(pipeline, out, "--context-source", "random",
                           "--seed", "7") == EXIT_OK
        outs.append(read_manifest(out))
    assert [e["sha256"] for e in outs[0]] == [e["sha256"] for e in outs[1]]


def test_zero_source_on_baseline_matches_default_flags(pipeline, tmp_path):
    plain = tmp_path / "plain"
    zero = tmp_path / "zero"
    assert decode_into(pipeline, plain) == EXIT_OK
    assert decode_into(pipeline, zero, "--context-source", "zero") == EXIT_OK
    assert data_lines(zero / "sentences_eval_zero.csv") == \
        data_lines(plain / "sentences_eval_predicted.csv")


def test_ablate_covers_all_sources(pipeline, tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", "--corpus", str(pipeline["corpus"]),
                 "--tokenizer", str(pipeline["run"]),
                 "--checkpoint", str(pipeline["ctx"] / "model.ckpt"),
                 "--baseline-checkpoint", str(pipeline["run"] / "model.ckpt"),
                 "--out", str(out)] + BEAM_ARGS) == EXIT_OK
    rows = data_lines(out / "ablation_eval.csv")
    for source in ("zero", "predicted", "oracle", "random"):
        assert any(row.startswith(f"{source},") for row in rows), source
        assert (out / f"nbest_eval_{source}.txt").exists()
    assert (out / "ablation_eval.svg").exists()


def test_report_merges_median_rows(pipeline, tmp_path):
    dec = tmp_path / "dec"
    assert decode_into(pipeline, dec) == EXIT_OK
    out = tmp_path / "rep"
    assert main(["report", str(dec / "wer_eval_predicted.csv"),
                 "--out", str(out)]) == EXIT_OK
    summary = data_lines(out / "summary.csv")
    assert summary[0] == "source,median_conv_wer"
    assert len(summary) == 2
    assert (out / "summary.svg").exists()


def test_report_without_medians_fails_validation(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("# nothing\n", encoding="utf-8")
    assert main(["report", str(empty), "--out", str(tmp_path)]) == EXIT_VALIDATION


# ---------------------------------------------------------------------------
# training entry points
# ---------------------------------------------------------------------------

def test_train_continue_from_checkpoint(pipeline, tmp_path):
    out = tmp_path / "cont"
    assert main(["train", "--corpus", str(pipeline["corpus"]),
                 "--tokenizer", str(pipeline["run"]),
                 "--init", str(pipeline["run"] / "model.ckpt"),
                 "--out", str(out)] + TRAIN_ARGS) == EXIT_OK
    assert (out / "model.ckpt").exists()


def test_train_init_mode_conflict_fails_validation(pipeline, tmp_path):
    assert main(["train", "--corpus", str(pipeline["corpus"]),
                 "--tokenizer", str(pipeline["run"]),
                 "--init", str(pipeline["run"] / "model.ckpt"),
                 "--mode", "mean", "--out", str(tmp_path)] + TRAIN_ARGS) == \
        EXIT_VALIDATION


def test_pretrain_writes_separate_artifacts(pipeline, tmp_path):
    out = tmp_path / "pre"
    assert main(["pretrain", "--corpus", str(pipeline["corpus"]),
                 "--tokenizer", str(pipeline["run"]), "--mode", "mean",
                 "--out", str(out)] + MODEL_ARGS + TRAIN_ARGS) == EXIT_OK
    assert (out / "pretrained.ckpt").exists()
    assert (out / "pretrain_trace.csv").exists()


def test_lm_train_bootstrap_and_eval(pipeline, tmp_path):
    out = tmp_path / "lm"
    lm_args = ["--config", "embed_dim=4", "--config", "hidden=5"]
    assert main(["lm", "--corpus", str(pipeline["corpus"]),
                 "--tokenizer", str(pipeline["run"]), "--out", str(out)]
                + TRAIN_ARGS + lm_args) == EXIT_OK
    assert (out / "lm_plain.ckpt").exists()
    assert main(["lm", "--corpus", str(pipeline["corpus"]),
                 "--tokenizer", str(pipeline["run"]), "--out", str(out),
                 "--conversational", "--bootstrap-from",
                 str(out / "lm_plain.ckpt")] + TRAIN_ARGS + lm_args) == EXIT_OK
    assert (out / "lm_conv.ckpt").exists()
    assert main(["lm", "--corpus", str(pipeline["corpus"]),
                 "--tokenizer", str(pipeline["run"]), "--out", str(out),
                 "--eval-only", str(out / "lm_conv.ckpt")]) == EXIT_OK
