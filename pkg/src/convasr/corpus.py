"""Synthetic multi-sentence conversations with cross-sentence topical
coherence, plus their feature synthesis and line-delimited serialization.

Each conversation draws a topic pool; words come from that pool with
probability ``topic_word_fraction``, otherwise uniformly from the lexicon.
Acoustics are per-word prototype frame blocks plus Gaussian noise. A
configurable fraction of the lexicon is arranged into prototype-sharing
pairs whose members sit in different topic pools, so listening alone cannot
tell them apart but the conversation topic can.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_NAME = "convasr-corpus"
FORMAT_VERSION = 1
SPLITS = ("train", "dev", "eval")
MS_PER_FRAME = 10


class CorpusError(ValueError):
    pass


class EmptyCorpusError(CorpusError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    """Synthetic acoustic front end: per-word prototypes plus noise.

    ``confusable_fraction`` of the lexicon is paired off; both members of a
    pair reuse one prototype, like homophones.
    """

    feature_dim: int = 16
    frames_per_word: tuple[int, int] = (3, 6)
    noise_sigma: float = 0.3
    prototype_seed: int = 0
    confusable_fraction: float = 0.0

    def __post_init__(self):
        if self.feature_dim < 1:
            raise CorpusError("feature_dim must be >= 1")
        lo, hi = self.frames_per_word
        if lo < 1 or hi < lo:
            raise CorpusError(f"bad frames_per_word range {self.frames_per_word}")
        if self.noise_sigma < 0:
            raise CorpusError("noise_sigma must be >= 0")
        if not 0.0 <= self.confusable_fraction <= 1.0:
            raise CorpusError("confusable_fraction must be in [0, 1]")


@dataclass(frozen=True)
class SplitSizes:
    train: int = 0
    dev: int = 0
    eval: int = 0

    def __post_init__(self):
        if min(self.train, self.dev, self.eval) < 0:
            raise CorpusError("split sizes must be >= 0")

    def get(self, split: str) -> int:
        return getattr(self, split)


@dataclass(frozen=True)
class GeneratorConfig:
    num_conversations: SplitSizes = SplitSizes(train=20, dev=4, eval=8)
    sentences_per_conversation: tuple[int, int] = (4, 8)
    words_per_sentence: tuple[int, int] = (2, 5)
    lexicon_size: int = 60
    word_length: tuple[int, int] = (3, 7)
    topic_count: int = 6
    topic_word_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        for name in ("sentences_per_conversation", "words_per_sentence", "word_length"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise CorpusError(f"bad {name} range {(lo, hi)}")
        if self.lexicon_size < 1:
            raise CorpusError("lexicon_size must be >= 1")
        if self.topic_count < 1:
            raise CorpusError("topic_count must be >= 1")
        if not 0.0 <= self.topic_word_fraction <= 1.0:
            raise CorpusError("topic_word_fraction must be in [0, 1]")


@dataclass(eq=False)
class Sentence:
    index: int
    onset_ms: int
    words: tuple[int, ...]
    feature_seed: int
    features: np.ndarray = field(repr=False)


@dataclass(eq=False)
class Conversation:
    conv_id: str
    sentences: list[Sentence]


@dataclass(eq=False)
class CorpusSet:
    config: GeneratorConfig
    spec: FeatureSpec
    lexicon: tuple[str, ...]
    train: list[Conversation] = field(default_factory=list)
    dev: list[Conversation] = field(default_factory=list)
    eval: list[Conversation] = field(default_factory=list)

    def split(self, name: str) -> list[Conversation]:
        if name not in SPLITS:
            raise CorpusError(f"unknown split {name!r}")
        return getattr(self, name)

    def words_of(self, sentence: Sentence) -> list[str]:
        return [self.lexicon[w] for w in sentence.words]

    def transcripts(self, split: str) -> list[list[str]]:
        return [self.words_of(s) for conv in self.split(split) for s in conv.sentences]

    def word_id(self, word: str) -> int:
        """Lexicon index, or lexicon_size for out-of-lexicon words."""
        idx = self._index().get(word)
        return len(self.lexicon) if idx is None else idx

    def _index(self) -> dict[str, int]:
        if not hasattr(self, "_word_index"):
            self._word_index = {w: i for i, w in enumerate(self.lexicon)}
        return self._word_index


# ---------------------------------------------------------------------------
# lexicon, topics, prototypes
# ---------------------------------------------------------------------------

def make_lexicon(config: GeneratorConfig) -> tuple[str, ...]:
    """Deterministic unique word strings drawn from the config seed."""
    rng = np.random.default_rng([config.seed, 101])
    letters = np.array(list(string.ascii_lowercase))
    lo, hi = config.word_length
    seen: set[str] = set()
    words: list[str] = []
    while len(words) < config.lexicon_size:
        length = int(rng.integers(lo, hi + 1))
        word = "".join(rng.choice(letters, size=length))
        if word not in seen:
            seen.add(word)
            words.append(word)
    return tuple(words)


def topic_pool(config: GeneratorConfig, topic: int) -> list[int]:
    """Word ids owned by one topic; pools partition the lexicon."""
    return [w for w in range(config.lexicon_size) if w % config.topic_count == topic]


def confusable_pair_count(spec: FeatureSpec, lexicon_size: int) -> int:
    return int(spec.confusable_fraction * lexicon_size) // 2


def _canonical_word(word: int, n_pairs: int) -> int:
    if word < 2 * n_pairs and word % 2 == 1:
        return word - 1
    return word


class PrototypeBank:
    """Fixed per-word frame blocks, drawn once from the prototype seed."""

    def __init__(self, spec: FeatureSpec, lexicon_size: int):
        self.spec = spec
        self.lexicon_size = lexicon_size
        n_pairs = confusable_pair_count(spec, lexicon_size)
        lo, hi = spec.frames_per_word
        self._prototypes: list[np.ndarray] = []
        for word in range(lexicon_size):
            canonical = _canonical_word(word, n_pairs)
            if canonical < word:
                proto = self._prototypes[canonical]
            else:
                rng = np.random.default_rng([spec.prototype_seed, 7, canonical])
                frames = int(rng.integers(lo, hi + 1))
                proto = rng.standard_normal((frames, spec.feature_dim))
                proto.flags.writeable = False
            self._prototypes.append(proto)

    def prototype(self, word: int) -> np.ndarray:
        if not 0 <= word < self.lexicon_size:
            raise CorpusError(f"unknown word id {word} (lexicon size {self.lexicon_size})")
        return self._prototypes[word]

    def frames_for(self, words) -> int:
        return sum(self.prototype(w).shape[0] for w in words)


def synthesize_features(words, spec: FeatureSpec, lexicon_size: int, seed: int,
                        bank: PrototypeBank | None = None) -> np.ndarray:
    """Concatenated word prototypes plus i.i.d. Gaussian noise."""
    if bank is None:
        bank = PrototypeBank(spec, lexicon_size)
    blocks = [bank.prototype(w) for w in words]
    if not blocks:
        return np.zeros((0, spec.feature_dim))
    clean = np.concatenate(blocks, axis=0)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng([seed, 13])
        clean = clean + rng.normal(0.0, spec.noise_sigma, size=clean.shape)
    out = np.ascontiguousarray(clean)
    out.flags.writeable = False
    return out


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def serialize_by_onset(conversation: Conversation) -> Conversation:
    """Re-sort sentences ascending by (onset_ms, index); stable for ties."""
    ordered = sorted(conversation.sentences, key=lambda s: (s.onset_ms, s.index))
    return Conversation(conv_id=conversation.conv_id, sentences=ordered)


def _generate_conversation(config: GeneratorConfig, spec: FeatureSpec,
                           bank: PrototypeBank, split: str, split_idx: int,
                           conv_idx: int) -> Conversation:
    rng = np.random.default_rng([config.seed, 211, split_idx, conv_idx])
    topic = int(rng.integers(config.topic_count))
    pool = topic_pool(config, topic)
    slo, shi = config.sentences_per_conversation
    wlo, whi = config.words_per_sentence
    n_sentences = int(rng.integers(slo, shi + 1))
    sentences: list[Sentence] = []
    onset = 0
    for k in range(n_sentences):
        n_words = int(rng.integers(wlo, whi + 1))
        words = []
        for _ in range(n_words):
            if rng.random() < config.topic_word_fraction:
                words.append(int(pool[rng.integers(len(pool))]))
            else:
                words.append(int(rng.integers(config.lexicon_size)))
        feature_seed = int(rng.integers(1, 2**31))
        feats = synthesize_features(words, spec, config.lexicon_size, feature_seed, bank)
        sentences.append(Sentence(index=k, onset_ms=onset, words=tuple(words),
                                  feature_seed=feature_seed, features=feats))
        duration = feats.shape[0] * MS_PER_FRAME
        onset += duration + int(rng.integers(200, 800))
    return Conversation(conv_id=f"{split}-{conv_idx:04d}", sentences=sentences)


def generate_corpus(config: GeneratorConfig, spec: FeatureSpec) -> CorpusSet:
    """Deterministic conversation-disjoint train/dev/eval splits."""
    if config.num_conversations.train == 0:
        raise EmptyCorpusError("train split would be empty (zero conversations)")
    if config.lexicon_size == 0:
        raise EmptyCorpusError("empty lexicon")
    lexicon = make_lexicon(config)
    bank = PrototypeBank(spec, config.lexicon_size)
    corpus = CorpusSet(config=config, spec=spec, lexicon=lexicon)
    for split_idx, split in enumerate(SPLITS):
        convs = corpus.split(split)
        for conv_idx in range(config.num_conversations.get(split)):
            convs.append(_generate_conversation(config, spec, bank, split,
                                                split_idx, conv_idx))
    return corpus


# ---------------------------------------------------------------------------
# serialization: one header record, then one sentence per line
# ---------------------------------------------------------------------------

def _config_to_json(config: GeneratorConfig) -> dict:
    return {
        "num_conversations": {s: config.num_conversations.get(s) for s in SPLITS},
        "sentences_per_conversation": list(config.sentences_per_conversation),
        "words_per_sentence": list(config.words_per_sentence),
        "lexicon_size": config.lexicon_size,
        "word_length": list(config.word_length),
        "topic_count": config.topic_count,
        "topic_word_fraction": config.topic_word_fraction,
        "seed": config.seed,
    }


def _config_from_json(data: dict) -> GeneratorConfig:
    counts = data["num_conversations"]
    return GeneratorConfig(
        num_conversations=SplitSizes(**{s: int(counts[s]) for s in SPLITS}),
        sentences_per_conversation=tuple(data["sentences_per_conversation"]),
        words_per_sentence=tuple(data["words_per_sentence"]),
        lexicon_size=int(data["lexicon_size"]),
        word_length=tuple(data["word_length"]),
        topic_count=int(data["topic_count"]),
        topic_word_fraction=float(data["topic_word_fraction"]),
        seed=int(data["seed"]),
    )


def _spec_to_json(spec: FeatureSpec) -> dict:
    return {
        "feature_dim": spec.feature_dim,
        "frames_per_word": list(spec.frames_per_word),
        "noise_sigma": spec.noise_sigma,
        "prototype_seed": spec.prototype_seed,
        "confusable_fraction": spec.confusable_fraction,
    }


def _spec_from_json(data: dict) -> FeatureSpec:
    return FeatureSpec(
        feature_dim=int(data["feature_dim"]),
        frames_per_word=tuple(data["frames_per_word"]),
        noise_sigma=float(data["noise_sigma"]),
        prototype_seed=int(data["prototype_seed"]),
        confusable_fraction=float(data["confusable_fraction"]),
    )


def save_corpus(corpus: CorpusSet, path):
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "generator": _config_to_json(corpus.config),
        "features": _spec_to_json(corpus.spec),
    }
    lines = [json.dumps(header, sort_keys=True)]
    for split in SPLITS:
        for conv in corpus.split(split):
            for s in conv.sentences:
                tokens = " ".join(corpus.words_of(s))
                lines.append(f"{split}\t{conv.conv_id}\t{s.index}\t{s.onset_ms}"
                             f"\t{s.feature_seed}\t{tokens}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_corpus(path) -> CorpusSet:
    """Parse a corpus file; features are re-synthesized from stored seeds."""
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return CorpusSet(config=GeneratorConfig(num_conversations=SplitSizes()),
                         spec=FeatureSpec(), lexicon=())
    lines = text.splitlines()
    try:
        header = json.loads(lines[0])
        if header.get("format") != FORMAT_NAME:
            raise CorpusError(f"{path}:1: not a corpus file")
        config = _config_from_json(header["generator"])
        spec = _spec_from_json(header["features"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorpusError(f"{path}:1: malformed header record: {exc}") from exc

    lexicon = make_lexicon(config)
    index = {w: i for i, w in enumerate(lexicon)}
    bank = PrototypeBank(spec, config.lexicon_size)
    corpus = CorpusSet(config=config, spec=spec, lexicon=lexicon)
    by_conv: dict[tuple[str, str], Conversation] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise CorpusError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
        split, conv_id, idx_s, onset_s, fseed_s, tokens = parts
        if split not in SPLITS:
            raise CorpusError(f"{path}:{lineno}: unknown split {split!r}")
        try:
            idx, onset, fseed = int(idx_s), int(onset_s), int(fseed_s)
        except ValueError as exc:
            raise CorpusError(f"{path}:{lineno}: non-integer field: {exc}") from exc
        if onset < 0:
            raise CorpusError(f"{path}:{lineno}: negative onset {onset}")
        words = []
        for tok in tokens.split(" ") if tokens else []:
            if tok not in index:
                raise CorpusError(f"{path}:{lineno}: word {tok!r} not in lexicon")
            words.append(index[tok])
        feats = synthesize_features(words, spec, config.lexicon_size, fseed, bank)
        sentence = Sentence(index=idx, onset_ms=onset, words=tuple(words),
                            feature_seed=fseed, features=feats)
        key = (split, conv_id)
        if key not in by_conv:
            by_conv[key] = Conversation(conv_id=conv_id, sentences=[])
            corpus.split(split).append(by_conv[key])
        by_conv[key].sentences.append(sentence)
    for key, conv in by_conv.items():
        conv.sentences = serialize_by_onset(conv).sentences
    return corpus


def corpora_equal(a: CorpusSet, b: CorpusSet) -> bool:
    if a.config != b.config or a.spec != b.spec or a.lexicon != b.lexicon:
        return False
    for split in SPLITS:
        ca, cb = a.split(split), b.split(split)
        if len(ca) != len(cb):
            return False
        for conv_a, conv_b in zip(ca, cb):
            if conv_a.conv_id != conv_b.conv_id:
                return False
            if len(conv_a.sentences) != len(conv_b.sentences):
                return False
            for sa, sb in zip(conv_a.sentences, conv_b.sentences):
                if (sa.index, sa.onset_ms, sa.words, sa.feature_seed) != \
                        (sb.index, sb.onset_ms, sb.words, sb.feature_seed):
                    return False
                if not np.array_equal(sa.features, sb.features):
                    return False
    return True
