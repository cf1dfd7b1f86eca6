"""Byte-pair-encoding target units learned from training transcripts.

Words are split into characters plus a word-final marker symbol; the most
frequent adjacent symbol pair is merged greedily, ties broken by taking the
lexicographically smallest pair. The marker (U+2581) sorts after ASCII
letters, which keeps tie-breaking on letter pairs ahead of marker pairs.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

END_OF_WORD = "▁"
UNK_TEXT = "<unk>"

BLANK_ID = 0
SOS_EOS_ID = 1
UNK_ID = 2
NUM_SPECIALS = 3

# full-corpus reference configuration; desk-scale runs use far fewer merges
FULL_SCALE_UNITS = 9838


class TokenizerError(ValueError):
    pass


@dataclass(frozen=True)
class BpeModel:
    alphabet: tuple[str, ...]            # base symbols, marker included
    merges: tuple[tuple[str, str], ...]  # in application order

    def symbols(self) -> list[str]:
        """Alphabet followed by each merge's output, first occurrence only."""
        seen = set(self.alphabet)
        out = list(self.alphabet)
        for left, right in self.merges:
            sym = left + right
            if sym not in seen:
                seen.add(sym)
                out.append(sym)
        return out


@dataclass(frozen=True)
class Vocab:
    unit_to_id: dict[str, int] = field(compare=False)
    id_to_unit: tuple[str, ...]
    blank: int = BLANK_ID
    sos_eos: int = SOS_EOS_ID
    unk: int = UNK_ID

    @property
    def size(self) -> int:
        return len(self.id_to_unit)


def _word_symbols(word: str) -> tuple[str, ...]:
    return tuple(word) + (END_OF_WORD,)


def _pair_counts(seqs: dict[tuple[str, ...], int]) -> Counter:
    counts: Counter = Counter()
    for seq, freq in seqs.items():
        for a, b in zip(seq, seq[1:]):
            counts[(a, b)] += freq
    return counts


def _apply_merge(seq: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    out = []
    i = 0
    while i < len(seq):
        if i + 1 < len(seq) and (seq[i], seq[i + 1]) == pair:
            out.append(seq[i] + seq[i + 1])
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return tuple(out)


def learn_bpe(transcripts, num_merges: int) -> BpeModel:
    """Greedy most-frequent-pair merging over word sequences.

    ``transcripts`` is an iterable of word-string sequences. Learning stops
    early when no pair occurs anymore.
    """
    if num_merges < 0:
        raise TokenizerError("num_merges must be >= 0")
    word_freq: Counter = Counter()
    for sentence in transcripts:
        for word in sentence:
            word_freq[word] += 1
    if not word_freq:
        raise TokenizerError("cannot learn BPE from an empty corpus")

    alphabet = sorted({ch for w in word_freq for ch in w} | {END_OF_WORD})
    seqs = {_word_symbols(w): f for w, f in word_freq.items()}
    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        counts = _pair_counts(seqs)
        if not counts:
            break
        best = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        seqs = {_apply_merge(seq, best): f for seq, f in seqs.items()}
    return BpeModel(alphabet=tuple(alphabet), merges=tuple(merges))


def build_vocab(model: BpeModel) -> Vocab:
    """Ids: blank=0, sos/eos=1, unk=2, then learned units in symbol order."""
    units = ["<blank>", "<sos/eos>", UNK_TEXT] + model.symbols()
    unit_to_id = {u: i for i, u in enumerate(units)}
    if len(unit_to_id) != len(units):
        raise TokenizerError("duplicate unit produced while building the vocabulary")
    return Vocab(unit_to_id=unit_to_id, id_to_unit=tuple(units))


@dataclass(frozen=True)
class Tokenizer:
    model: BpeModel
    vocab: Vocab

    def encode_word(self, word: str) -> list[int]:
        known = set(self.model.alphabet)
        seq: list[str] = []
        for ch in word:
            seq.append(ch if ch in known else UNK_TEXT)
        seq.append(END_OF_WORD)
        symbols = tuple(seq)
        for pair in self.model.merges:
            symbols = _apply_merge(symbols, pair)
        return [self.vocab.unit_to_id.get(s, self.vocab.unk) for s in symbols]

    def encode(self, words) -> list[int]:
        out: list[int] = []
        for w in words:
            out.extend(self.encode_word(w))
        return out

    def decode(self, unit_ids) -> list[str]:
        words: list[str] = []
        current = ""
        for uid in unit_ids:
            if not 0 <= uid < self.vocab.size:
                raise TokenizerError(f"unit id {uid} out of range")
            if uid in (self.vocab.blank, self.vocab.sos_eos):
                continue
            unit = self.vocab.id_to_unit[uid]
            if uid == self.vocab.unk:
                current += UNK_TEXT
                continue
            if unit.endswith(END_OF_WORD):
                words.append(current + unit[: -len(END_OF_WORD)])
                current = ""
            else:
                current += unit
        if current:
            words.append(current)
        return words


def train_tokenizer(transcripts, num_merges: int) -> Tokenizer:
    model = learn_bpe(transcripts, num_merges)
    return Tokenizer(model=model, vocab=build_vocab(model))


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def save_bpe(model: BpeModel, path):
    lines = ["#alphabet\t" + " ".join(model.alphabet)]
    lines += [f"{left}\t{right}" for left, right in model.merges]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_bpe(path) -> BpeModel:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#alphabet\t"):
        raise TokenizerError(f"{path}: missing alphabet header")
    alphabet = tuple(lines[0].split("\t", 1)[1].split(" "))
    merges = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise TokenizerError(f"{path}:{lineno}: malformed merge line {line!r}")
        merges.append((parts[0], parts[1]))
    return BpeModel(alphabet=alphabet, merges=tuple(merges))


def save_vocab(vocab: Vocab, path):
    lines = [f"{i}\t{u}" for i, u in enumerate(vocab.id_to_unit)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocab(path) -> Vocab:
    units: list[str] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].isdigit():
            raise TokenizerError(f"{path}:{lineno}: malformed vocab line {line!r}")
        if int(parts[0]) != len(units):
            raise TokenizerError(f"{path}:{lineno}: non-contiguous id {parts[0]}")
        units.append(parts[1])
    return Vocab(unit_to_id={u: i for i, u in enumerate(units)}, id_to_unit=tuple(units))


def load_tokenizer(bpe_path, vocab_path) -> Tokenizer:
    return Tokenizer(model=load_bpe(bpe_path), vocab=load_vocab(vocab_path))
