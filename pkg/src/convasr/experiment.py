"""Frozen settings for the desk-scale context study.

Everything the trend experiments depend on lives here: the synthetic
corpus recipe, model dimensions, training schedules, and the beam used
for scoring. Tests and scripts import these builders instead of
restating numbers so the study stays reproducible from one place.

The corpus is sized so that five training seeds fit in a desk-scale
compute budget while leaving a measurable gap between context sources:
ninety percent of the lexicon forms acoustically identical pairs whose
members always belong to different topics, so only conversation context
can tell them apart, and the remaining unpaired words let a model that
listens to its own previous hypothesis recover after a wrong turn.
"""

from __future__ import annotations

import dataclasses

from .corpus import CorpusSet, FeatureSpec, GeneratorConfig, SplitSizes
from .decode import BeamConfig
from .model import LmConfig, ModelConfig
from .tokenizer import Tokenizer
from .train import TrainConfig

TRAIN_SEEDS = (0, 1, 2, 3, 4)
BPE_MERGES = 600
MODEL_DIMS = {
    "enc_hidden": 20,
    "enc_proj": 20,
    "dec_hidden": 20,
    "embed_dim": 12,
    "attn_dim": 12,
    "ctx_dim": 12,
}


def corpus_config() -> tuple[GeneratorConfig, FeatureSpec]:
    gen = GeneratorConfig(
        num_conversations=SplitSizes(train=64, dev=8, eval=20),
        sentences_per_conversation=(4, 7),
        words_per_sentence=(1, 3),
        lexicon_size=24,
        word_length=(3, 5),
        topic_count=4,
        topic_word_fraction=1.0,
        seed=11,
    )
    spec = FeatureSpec(
        feature_dim=10,
        frames_per_word=(4, 7),
        noise_sigma=0.3,
        confusable_fraction=0.9,
    )
    return gen, spec


def baseline_model_config(tokenizer: Tokenizer) -> ModelConfig:
    return ModelConfig(feature_dim=10, vocab_size=tokenizer.vocab.size,
                       **MODEL_DIMS)


def context_model_config(tokenizer: Tokenizer, corpus: CorpusSet) -> ModelConfig:
    # one extra context id for out-of-lexicon words
    return dataclasses.replace(
        baseline_model_config(tokenizer),
        ctx_mode="mean",
        ctx_vocab_size=len(corpus.lexicon) + 1,
    )


def recognizer_train_config(seed: int) -> TrainConfig:
    # the floor keeps patience from stopping a run while the slowest
    # pathway (the context gain after a bootstrap) is still moving
    return TrainConfig(
        epochs=150,
        batch_size=4,
        patience=12,
        min_epochs=45,
        clip_norm=10.0,
        eps=3e-4,
        seed=seed,
    )


def pretrain_config(seed: int) -> TrainConfig:
    # short on purpose: a text-only warm start helps the decoder find
    # word structure but must not entrench it before joint training
    return dataclasses.replace(
        recognizer_train_config(seed), epochs=15, patience=6, min_epochs=0
    )


def lm_config(tokenizer: Tokenizer) -> LmConfig:
    return LmConfig(vocab_size=tokenizer.vocab.size, embed_dim=12, hidden=16)


def conversational_lm_config(tokenizer: Tokenizer, corpus: CorpusSet) -> LmConfig:
    return dataclasses.replace(
        lm_config(tokenizer),
        conversational=True,
        ctx_vocab_size=len(corpus.lexicon) + 1,
        ctx_dim=12,
    )


def lm_train_config(seed: int = 0, conversational: bool = False) -> TrainConfig:
    return TrainConfig(
        epochs=80,
        batch_size=8,
        patience=10,
        min_epochs=30 if conversational else 0,
        clip_norm=10.0,
        eps=1e-4,
        seed=seed,
    )


def beam_config() -> BeamConfig:
    return BeamConfig(beam=10)
