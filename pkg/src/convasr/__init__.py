"""End-to-end speech recognition on synthetic conversations, with a decoder
that conditions on a summary of the previous sentence."""

from .corpus import (CorpusSet, FeatureSpec, GeneratorConfig, SplitSizes,
                     generate_corpus, load_corpus, save_corpus)
from .decode import BeamConfig, beam_search, decode_conversation, evaluate, wer_counts
from .model import (LmConfig, ModelConfig, Recognizer, RnnLm, bootstrap_lm,
                    bootstrap_recognizer, load_lm, load_recognizer, save_lm,
                    save_recognizer)
from .tokenizer import Tokenizer, train_tokenizer
from .train import TrainConfig, make_batch_plan, prepare_split, pretrain_decoder, train_lm

__version__ = "0.1.0"

__all__ = [
    "BeamConfig", "CorpusSet", "FeatureSpec", "GeneratorConfig", "LmConfig",
    "ModelConfig", "Recognizer", "RnnLm", "SplitSizes", "TrainConfig",
    "Tokenizer", "beam_search", "bootstrap_lm", "bootstrap_recognizer",
    "decode_conversation", "evaluate", "generate_corpus", "load_corpus",
    "load_lm", "load_recognizer", "make_batch_plan", "prepare_split",
    "pretrain_decoder", "save_corpus", "save_lm", "save_recognizer",
    "train_lm", "train_tokenizer", "wer_counts",
]
