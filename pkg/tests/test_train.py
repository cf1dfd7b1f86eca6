import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convasr.corpus import FeatureSpec, GeneratorConfig, SplitSizes, generate_corpus
from convasr.model import LmConfig, ModelConfig, Recognizer, RnnLm
from convasr.numcore import ParamSet
from convasr.tokenizer import train_tokenizer
from convasr.train import (
    PRETRAIN_PREFIXES,
    BatchItem,
    PreparedConversation,
    PreparedSentence,
    TrainConfig,
    TrainingError,
    _fit,
    dev_loss,
    lm_perplexity,
    make_batch_plan,
    prepare_split,
    pretrain_decoder,
    train,
    train_lm,
)

# ---------------------------------------------------------------------------
# batch planning
# ---------------------------------------------------------------------------

counts_strategy = st.lists(st.integers(0, 6), min_size=1, max_size=12)


@given(counts_strategy, st.integers(1, 5), st.integers(0, 1000))
@settings(max_examples=120, deadline=None)
def test_plan_covers_each_sentence_exactly_once(counts, batch_size, seed):
    plan = make_batch_plan(counts, batch_size, seed)
    seen = [item for batch in plan for item in batch]
    expected = {(c, s) for c, n in enumerate(counts) for s in range(n)}
    assert {(i.conv, i.sentence) for i in seen} == expected
    assert len(seen) == len(expected)


@given(counts_strategy, st.integers(1, 5), st.integers(0, 1000))
@settings(max_examples=120, deadline=None)
def test_plan_serializes_conversations(counts, batch_size, seed):
    plan = make_batch_plan(counts, batch_size, seed)
    assert all(1 <= len(batch) <= batch_size for batch in plan)
    per_conv = {}
    for batch in plan:
        convs_in_batch = [i.conv for i in batch]
        assert len(set(convs_in_batch)) == len(convs_in_batch)
        for item in batch:
            per_conv.setdefault(item.conv, []).append(item.sentence)
    for conv, order in per_conv.items():
        assert order == list(range(counts[conv]))


@given(counts_strategy, st.integers(1, 5), st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_plan_is_seed_deterministic(counts, batch_size, seed):
    assert make_batch_plan(counts, batch_size, seed) == \
        make_batch_plan(counts, batch_size, seed)


def test_plan_single_conversation_runs_in_order():
    plan = make_batch_plan([2], 1, seed=0)
    assert plan == [[BatchItem(conv=0, sentence=0)], [BatchItem(conv=0, sentence=1)]]


def test_plan_rejects_bad_batch_size():
    with pytest.raises(ValueError):
        make_batch_plan([1], 0, seed=0)


# ---------------------------------------------------------------------------
# shared fixtures
# ---------------------------------------------------------------------------

GEN = GeneratorConfig(
    num_conversations=SplitSizes(train=3, dev=2, eval=1),
    sentences_per_conversation=(2, 3),
    words_per_sentence=(1, 2),
    lexicon_size=8,
    word_length=(3, 4),
    topic_count=2,
    topic_word_fraction=1.0,
    seed=3,
)
SPEC = FeatureSpec(feature_dim=4, frames_per_word=(4, 5), noise_sigma=0.2,
                   confusable_fraction=0.5)


@pytest.fixture(scope="module")
def tiny_setup():
    corpus = generate_corpus(GEN, SPEC)
    tok = train_tokenizer(corpus.transcripts("train"), 600)
    data = {s: prepare_split(corpus, tok, s) for s in ("train", "dev", "eval")}
    return corpus, tok, data


def tiny_model(tok, ctx_mode="baseline", seed=0):
    cfg = ModelConfig(feature_dim=SPEC.feature_dim, vocab_size=tok.vocab.size,
                      enc_hidden=5, enc_proj=5, dec_hidden=5, embed_dim=4,
                      attn_dim=4, attn_filters=2, attn_kernel=3,
                      ctx_mode=ctx_mode,
                      ctx_vocab_size=GEN.lexicon_size + 1 if ctx_mode != "baseline" else 0,
                      ctx_dim=4)
    model = Recognizer(cfg)
    model.init_params(seed)
    return model


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------

def test_prepared_units_and_context_ids(tiny_setup):
    corpus, tok, data = tiny_setup
    for split in ("train", "dev", "eval"):
        convs = corpus.split(split)
        prepared = data[split]
        assert [p.conv_id for p in prepared] == [c.conv_id for c in convs]
        assert [p.index for p in prepared] == list(range(len(convs)))
        for conv, pconv in zip(convs, prepared):
            for s, ps in zip(conv.sentences, pconv.sentences):
                words = corpus.words_of(s)
                assert ps.words == words
                assert ps.units == tok.encode(words)
                assert ps.ctx_ids == list(s.words)
                assert ps.features is s.features


# ---------------------------------------------------------------------------
# the shared fitting loop
# ---------------------------------------------------------------------------

def scripted_fit(dev_values, cfg, epochs_of_data=1):
    """Drive _fit with a quadratic loss and a scripted dev metric."""
    params = ParamSet()
    w = params.add("w", np.array([4.0]))
    data = [PreparedConversation(conv_id="c", index=0, sentences=[
        PreparedSentence(words=["x"], units=[3], ctx_ids=[0],
                         features=np.zeros((1, 1)))
        for _ in range(epochs_of_data)
    ])]
    snapshots = []
    dev_iter = iter(dev_values)

    def item_loss(conv, k):
        w.add_grad(2.0 * w.value)
        return float(w.value[0] ** 2), 1

    def dev_metric():
        snapshots.append(w.value.copy())
        return next(dev_iter)

    result = _fit(params, data, cfg, plan_salt=1, item_loss=item_loss,
                  dev_metric=dev_metric)
    return result, w, snapshots


def test_fit_stops_after_patience_and_restores_best():
    cfg = TrainConfig(epochs=10, batch_size=1, patience=2, eps=1e-4, seed=0)
    result, w, snapshots = scripted_fit([3.0, 1.0, 2.0, 2.5, 2.5, 2.5], cfg)
    assert result.epochs_run == 4
    assert result.best_epoch == 2
    assert result.best_dev_metric == 1.0
    np.testing.assert_array_equal(w.value, snapshots[1])
    assert [e for e, _, _ in result.trace] == [1, 2, 3, 4]


def test_fit_min_epochs_floor_delays_stopping():
    cfg = TrainConfig(epochs=8, batch_size=1, patience=1, min_epochs=6,
                      eps=1e-4, seed=0)
    result, _, _ = scripted_fit([5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0], cfg)
    assert result.epochs_run == 6
    assert result.best_epoch == 1


def test_fit_runs_to_the_end_when_dev_keeps_improving():
    cfg = TrainConfig(epochs=4, batch_size=1, patience=1, eps=1e-4, seed=0)
    result, _, _ = scripted_fit([4.0, 3.0, 2.0, 1.0], cfg)
    assert result.epochs_run == 4
    assert result.best_epoch == 4


def test_fit_nan_dev_disables_early_stopping():
    cfg = TrainConfig(epochs=5, batch_size=1, patience=1, eps=1e-4, seed=0)
    result, w, snapshots = scripted_fit([float("nan")] * 5, cfg)
    assert result.epochs_run == 5
    assert result.best_epoch == 5
    assert np.isnan(result.best_dev_metric)
    np.testing.assert_array_equal(w.value, snapshots[-1])


def test_fit_wraps_item_failures_with_context():
    params = ParamSet()
    params.add("w", np.array([1.0]))
    data = [PreparedConversation(conv_id="train-0007", index=0, sentences=[
        PreparedSentence(words=["x"], units=[3], ctx_ids=[0],
                         features=np.zeros((1, 1)))
    ])]

    def item_loss(conv, k):
        raise ValueError("boom")

    cfg = TrainConfig(epochs=1, batch_size=1, seed=0)
    with pytest.raises(TrainingError, match="train-0007"):
        _fit(params, data, cfg, plan_salt=1, item_loss=item_loss,
             dev_metric=lambda: 1.0)


# ---------------------------------------------------------------------------
# end-to-end training smoke
# ---------------------------------------------------------------------------

def test_train_improves_dev_loss(tiny_setup):
    corpus, tok, data = tiny_setup
    model = tiny_model(tok, ctx_mode="mean")
    before = dev_loss(model, data["dev"])
    cfg = TrainConfig(epochs=3, batch_size=2, patience=3, eps=1e-4,
                      clip_norm=10.0, seed=0)
    result = train(model, data["train"], data["dev"], cfg)
    assert result.epochs_run == 3
    assert len(result.trace) == 3
    assert result.best_dev_metric < before
    assert all(np.isfinite(t.value).all() for t in model.params.tensors())


def test_train_is_deterministic(tiny_setup):
    corpus, tok, data = tiny_setup
    cfg = TrainConfig(epochs=2, batch_size=2, eps=1e-4, seed=1)
    outs = []
    for _ in range(2):
        model = tiny_model(tok)
        train(model, data["train"], data["dev"], cfg)
        outs.append(model.params.copy_values())
    for name in outs[0]:
        np.testing.assert_array_equal(outs[0][name], outs[1][name])


def test_pretrain_touches_only_decoder_side(tiny_setup):
    corpus, tok, data = tiny_setup
    model = tiny_model(tok, ctx_mode="mean", seed=2)
    before = model.params.copy_values()
    cfg = TrainConfig(epochs=2, batch_size=2, eps=1e-4, seed=0)
    result = pretrain_decoder(model, data["train"], data["dev"], cfg)
    assert result.epochs_run == 2
    changed = {name for name, t in model.params.items()
               if not np.array_equal(t.value, before[name])}
    assert changed
    for name in changed:
        assert name.startswith(PRETRAIN_PREFIXES), name
    frozen = set(model.params.names()) - changed
    assert any(name.startswith("enc") for name in frozen)
    assert any(name.startswith("ctc_") for name in frozen)


def test_lm_training_and_perplexity(tiny_setup):
    corpus, tok, data = tiny_setup
    lm = RnnLm(LmConfig(vocab_size=tok.vocab.size, embed_dim=4, hidden=5))
    lm.init_params(0)
    before = lm_perplexity(lm, data["dev"])
    # oracle: perplexity is exp of mean per-term NLL over the split
    total = terms = 0
    for conv in data["dev"]:
        for k, s in enumerate(conv.sentences):
            prev = conv.sentences[k - 1].ctx_ids if k else None
            nll, n = lm.sequence_nll(s.units, prev, backward=False)
            total += nll
            terms += n
    assert before == pytest.approx(np.exp(total / terms), rel=1e-12)

    cfg = TrainConfig(epochs=3, batch_size=2, eps=1e-4, seed=0)
    result = train_lm(lm, data["train"], data["dev"], cfg)
    assert result.best_dev_metric < before
    assert lm_perplexity(lm, data["dev"]) == pytest.approx(result.best_dev_metric)
