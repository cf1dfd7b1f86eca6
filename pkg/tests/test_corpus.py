import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convasr.corpus import (
    MS_PER_FRAME,
    Conversation,
    CorpusError,
    EmptyCorpusError,
    FeatureSpec,
    GeneratorConfig,
    PrototypeBank,
    Sentence,
    SplitSizes,
    confusable_pair_count,
    corpora_equal,
    generate_corpus,
    load_corpus,
    make_lexicon,
    save_corpus,
    serialize_by_onset,
    synthesize_features,
    topic_pool,
)

SMALL = GeneratorConfig(
    num_conversations=SplitSizes(train=3, dev=1, eval=2),
    sentences_per_conversation=(2, 4),
    words_per_sentence=(1, 3),
    lexicon_size=12,
    word_length=(3, 5),
    topic_count=3,
    topic_word_fraction=0.8,
    seed=5,
)
SMALL_SPEC = FeatureSpec(feature_dim=6, frames_per_word=(4, 6), noise_sigma=0.2,
                         confusable_fraction=0.5)


def small_corpus():
    return generate_corpus(SMALL, SMALL_SPEC)


# ---------------------------------------------------------------------------
# lexicon and topics
# ---------------------------------------------------------------------------

def test_lexicon_is_unique_and_length_bounded():
    lex = make_lexicon(SMALL)
    assert len(lex) == SMALL.lexicon_size
    assert len(set(lex)) == len(lex)
    lo, hi = SMALL.word_length
    assert all(lo <= len(w) <= hi for w in lex)


def test_lexicon_is_seed_deterministic():
    assert make_lexicon(SMALL) == make_lexicon(SMALL)
    other = dataclasses.replace(SMALL, seed=6)
    assert make_lexicon(other) != make_lexicon(SMALL)


def test_topic_pools_partition_the_lexicon():
    pools = [topic_pool(SMALL, t) for t in range(SMALL.topic_count)]
    flat = sorted(w for pool in pools for w in pool)
    assert flat == list(range(SMALL.lexicon_size))


def test_confusable_pairs_span_two_topics():
    # Pair members are consecutive ids, so with topic_count >= 2 they always
    # land in different pools; the preceding sentence's topic is what breaks
    # the acoustic tie.
    n_pairs = confusable_pair_count(SMALL_SPEC, SMALL.lexicon_size)
    assert n_pairs == int(0.5 * 12) // 2 == 3
    for i in range(n_pairs):
        a, b = 2 * i, 2 * i + 1
        assert a % SMALL.topic_count != b % SMALL.topic_count


# ---------------------------------------------------------------------------
# prototypes and features
# ---------------------------------------------------------------------------

def test_pair_members_share_a_prototype():
    bank = PrototypeBank(SMALL_SPEC, SMALL.lexicon_size)
    n_pairs = confusable_pair_count(SMALL_SPEC, SMALL.lexicon_size)
    for i in range(n_pairs):
        np.testing.assert_array_equal(bank.prototype(2 * i), bank.prototype(2 * i + 1))
    # words beyond the paired region keep distinct prototypes
    a, b = 2 * n_pairs, 2 * n_pairs + 1
    assert not np.array_equal(bank.prototype(a), bank.prototype(b))


def test_prototypes_ignore_confusable_fraction_for_unpaired_words():
    plain = PrototypeBank(dataclasses.replace(SMALL_SPEC, confusable_fraction=0.0),
                          SMALL.lexicon_size)
    paired = PrototypeBank(SMALL_SPEC, SMALL.lexicon_size)
    n_pairs = confusable_pair_count(SMALL_SPEC, SMALL.lexicon_size)
    for w in range(2 * n_pairs, SMALL.lexicon_size):
        np.testing.assert_array_equal(plain.prototype(w), paired.prototype(w))


def test_prototype_frames_within_configured_range():
    bank = PrototypeBank(SMALL_SPEC, SMALL.lexicon_size)
    lo, hi = SMALL_SPEC.frames_per_word
    for w in range(SMALL.lexicon_size):
        assert lo <= bank.prototype(w).shape[0] <= hi
        assert bank.prototype(w).shape[1] == SMALL_SPEC.feature_dim


def test_bank_rejects_unknown_word():
    bank = PrototypeBank(SMALL_SPEC, 4)
    with pytest.raises(CorpusError):
        bank.prototype(4)


def test_noiseless_features_are_exact_prototype_concatenation():
    spec = dataclasses.replace(SMALL_SPEC, noise_sigma=0.0)
    bank = PrototypeBank(spec, SMALL.lexicon_size)
    words = [3, 0, 3]
    feats = synthesize_features(words, spec, SMALL.lexicon_size, seed=9, bank=bank)
    want = np.concatenate([bank.prototype(w) for w in words])
    np.testing.assert_array_equal(feats, want)


def test_features_deterministic_per_seed_and_vary_across_seeds():
    a = synthesize_features([1, 2], SMALL_SPEC, SMALL.lexicon_size, seed=4)
    b = synthesize_features([1, 2], SMALL_SPEC, SMALL.lexicon_size, seed=4)
    c = synthesize_features([1, 2], SMALL_SPEC, SMALL.lexicon_size, seed=5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_empty_word_list_gives_empty_features():
    feats = synthesize_features([], SMALL_SPEC, SMALL.lexicon_size, seed=1)
    assert feats.shape == (0, SMALL_SPEC.feature_dim)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def test_generation_is_deterministic():
    assert corpora_equal(small_corpus(), small_corpus())


def test_split_sizes_and_conversation_ids():
    corpus = small_corpus()
    for split, count in (("train", 3), ("dev", 1), ("eval", 2)):
        convs = corpus.split(split)
        assert len(convs) == count
        assert [c.conv_id for c in convs] == [f"{split}-{i:04d}" for i in range(count)]


def test_sentence_and_word_counts_respect_ranges():
    corpus = small_corpus()
    slo, shi = SMALL.sentences_per_conversation
    wlo, whi = SMALL.words_per_sentence
    for split in ("train", "dev", "eval"):
        for conv in corpus.split(split):
            assert slo <= len(conv.sentences) <= shi
            for s in conv.sentences:
                assert wlo <= len(s.words) <= whi
                assert all(0 <= w < SMALL.lexicon_size for w in s.words)


def test_fully_topical_conversations_stay_in_one_pool():
    config = dataclasses.replace(SMALL, topic_word_fraction=1.0)
    corpus = generate_corpus(config, SMALL_SPEC)
    for conv in corpus.train + corpus.dev + corpus.eval:
        topics = {w % config.topic_count for s in conv.sentences for w in s.words}
        assert len(topics) == 1


def test_adjacent_sentences_share_topic_more_than_chance():
    # Counting oracle: with topic fraction f and balanced pools, two words
    # from the same conversation agree on topic with probability at least
    # f^2, far above 1/topic_count for the default settings.
    config = dataclasses.replace(
        SMALL,
        num_conversations=SplitSizes(train=40, dev=1, eval=1),
        topic_word_fraction=0.9,
    )
    corpus = generate_corpus(config, SMALL_SPEC)
    agree = total = 0
    for conv in corpus.train:
        for prev, cur in zip(conv.sentences, conv.sentences[1:]):
            for a in prev.words:
                for b in cur.words:
                    agree += (a % config.topic_count) == (b % config.topic_count)
                    total += 1
    assert total > 100
    assert agree / total > 0.9 * 0.9 - 0.05


def test_onsets_increase_by_duration_plus_bounded_gap():
    corpus = small_corpus()
    for conv in corpus.train:
        assert conv.sentences[0].onset_ms == 0
        for prev, cur in zip(conv.sentences, conv.sentences[1:]):
            gap = cur.onset_ms - prev.onset_ms - prev.features.shape[0] * MS_PER_FRAME
            assert 200 <= gap < 800


def test_sentence_features_match_stored_seed():
    corpus = small_corpus()
    s = corpus.train[0].sentences[0]
    regen = synthesize_features(s.words, SMALL_SPEC, SMALL.lexicon_size, s.feature_seed)
    np.testing.assert_array_equal(s.features, regen)


def test_serialize_by_onset_orders_and_breaks_ties_by_index():
    feats = np.zeros((0, 4))
    mk = lambda i, onset: Sentence(index=i, onset_ms=onset, words=(), feature_seed=0,
                                   features=feats)
    conv = Conversation("x", [mk(2, 50), mk(0, 10), mk(1, 50)])
    ordered = serialize_by_onset(conv)
    assert [(s.index, s.onset_ms) for s in ordered.sentences] == \
        [(0, 10), (1, 50), (2, 50)]


def test_empty_train_split_is_rejected():
    config = dataclasses.replace(SMALL, num_conversations=SplitSizes(train=0, dev=1, eval=1))
    with pytest.raises(EmptyCorpusError):
        generate_corpus(config, SMALL_SPEC)


def test_word_id_maps_lexicon_and_out_of_lexicon():
    corpus = small_corpus()
    assert corpus.word_id(corpus.lexicon[4]) == 4
    assert corpus.word_id("zzzzzzzz") == len(corpus.lexicon)


def test_config_validation():
    with pytest.raises(CorpusError):
        GeneratorConfig(words_per_sentence=(3, 2))
    with pytest.raises(CorpusError):
        GeneratorConfig(topic_word_fraction=1.5)
    with pytest.raises(CorpusError):
        FeatureSpec(frames_per_word=(0, 3))
    with pytest.raises(CorpusError):
        FeatureSpec(confusable_fraction=-0.1)
    with pytest.raises(CorpusError):
        SplitSizes(train=-1)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_save_load_roundtrip(tmp_path):
    corpus = small_corpus()
    path = tmp_path / "corpus.txt"
    save_corpus(corpus, path)
    assert corpora_equal(load_corpus(path), corpus)


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_save_load_roundtrip_across_seeds(tmp_path_factory, seed):
    tmp = tmp_path_factory.mktemp("corpus")
    config = dataclasses.replace(SMALL, seed=seed)
    corpus = generate_corpus(config, SMALL_SPEC)
    save_corpus(corpus, tmp / "c.txt")
    assert corpora_equal(load_corpus(tmp / "c.txt"), corpus)


def test_load_reports_line_numbers_on_damage(tmp_path):
    corpus = small_corpus()
    path = tmp_path / "corpus.txt"
    save_corpus(corpus, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    lines[2] = lines[2] + "\textra-field"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(CorpusError, match=":3:"):
        load_corpus(path)


def test_load_rejects_foreign_header_and_unknown_words(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_text('{"format": "something-else"}\n', encoding="utf-8")
    with pytest.raises(CorpusError, match=":1:"):
        load_corpus(path)

    corpus = small_corpus()
    save_corpus(corpus, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    parts = lines[1].split("\t")
    parts[5] = "notaword"
    lines[1] = "\t".join(parts)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="notaword"):
        load_corpus(path)


def test_load_empty_file_gives_empty_corpus(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_text("", encoding="utf-8")
    corpus = load_corpus(path)
    assert corpus.train == [] and corpus.dev == [] and corpus.eval == []
