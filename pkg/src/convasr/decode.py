"""Beam decoding with joint attention/CTC scoring and LM shallow fusion,
context handling across a conversation, and word error rate.

Scores are label-synchronous: each candidate extension adds the attention
log-probability, ``ctc_weight`` times the CTC prefix-probability increment,
and ``lm_weight`` times the LM log-probability. Ending a hypothesis adds the
end-mark scores from all three plus a per-unit length bonus. Every component
is tracked separately so that the combined score can be audited afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import CorpusSet
from .ctc import (CtcPrefixState, ctc_prefix_extend_batch, ctc_prefix_finish,
                  ctc_prefix_init, ctc_prefix_select)
from .model import DecoderState, Recognizer, RnnLm
from .tokenizer import BLANK_ID, SOS_EOS_ID, Tokenizer
from .train import PreparedConversation

CONTEXT_SOURCES = ("zero", "predicted", "oracle", "random")


class DecodeError(RuntimeError):
    pass


@dataclass(frozen=True)
class BeamConfig:
    beam: int = 10
    ctc_weight: float = 0.3
    lm_weight: float = 0.3
    length_bonus: float = 0.5
    max_len: int | None = None

    def __post_init__(self):
        if self.beam < 1:
            raise DecodeError("beam must be >= 1")
        if self.ctc_weight < 0 or self.lm_weight < 0:
            raise DecodeError("fusion weights must be >= 0")


@dataclass
class Hypothesis:
    units: tuple[int, ...]
    score: float
    att_score: float
    ctc_score: float
    lm_score: float
    length_bonus: float = 0.0
    dec_state: DecoderState | None = field(default=None, repr=False)
    ctc_state: CtcPrefixState | None = field(default=None, repr=False)
    lm_state: object = field(default=None, repr=False)

    def sort_key(self):
        return (-self.score, self.units)


def beam_search(model: Recognizer, enc: np.ndarray, ctc_logp: np.ndarray,
                c: np.ndarray | None, cfg: BeamConfig,
                lm: RnnLm | None = None, lm_c: np.ndarray | None = None
                ) -> list[Hypothesis]:
    """Return finished hypotheses, best first.

    ``enc`` and ``ctc_logp`` come from the same encoding of one sentence;
    ``c`` is the context summary used by every decoder step. Ties are broken
    by the unit sequence, so the result order is a total order.
    """
    vocab = ctc_logp.shape[1]
    ext_units = np.array([u for u in range(vocab) if u not in (BLANK_ID, SOS_EOS_ID)])
    max_len = cfg.max_len if cfg.max_len is not None else max(enc.shape[0], 2)

    start = Hypothesis(units=(), score=0.0, att_score=0.0, ctc_score=0.0,
                       lm_score=0.0, dec_state=model.start_state(enc.shape[0]),
                       ctc_state=ctc_prefix_init(ctc_logp, blank=BLANK_ID),
                       lm_state=lm.start_state() if lm is not None else None)
    active = [start]
    finished: list[Hypothesis] = []

    def finalize(hyp: Hypothesis, att_eos: float, lm_eos: float):
        _, ctc_inc = ctc_prefix_finish(hyp.ctc_state)
        bonus = cfg.length_bonus * len(hyp.units)
        att = hyp.att_score + att_eos
        ctc = hyp.ctc_score + ctc_inc
        lms = hyp.lm_score + lm_eos
        score = (att + cfg.ctc_weight * ctc + cfg.lm_weight * lms + bonus)
        finished.append(Hypothesis(units=hyp.units, score=float(score),
                                   att_score=float(att), ctc_score=float(ctc),
                                   lm_score=float(lms), length_bonus=float(bonus)))

    for _ in range(max_len + 1):
        candidates: list[Hypothesis] = []
        for hyp in active:
            y_prev = hyp.units[-1] if hyp.units else SOS_EOS_ID
            att_logp, dec_state = model.step_log_probs(enc, c, y_prev, hyp.dec_state)
            if lm is not None:
                lm_logp, lm_state = lm.step_log_probs(lm_c, y_prev, hyp.lm_state)
            else:
                lm_logp, lm_state = np.zeros(vocab), None
            finalize(hyp, float(att_logp[SOS_EOS_ID]), float(lm_logp[SOS_EOS_ID]))
            if len(hyp.units) >= max_len:
                continue
            log_psi, r_nb, r_b = ctc_prefix_extend_batch(hyp.ctc_state, ext_units)
            ctc_inc = log_psi - hyp.ctc_state.log_prefix
            gain = (att_logp[ext_units] + cfg.ctc_weight * ctc_inc
                    + cfg.lm_weight * lm_logp[ext_units])
            keep = np.argsort(-gain, kind="stable")[:cfg.beam]
            for i in keep:
                u = int(ext_units[i])
                candidates.append(Hypothesis(
                    units=hyp.units + (u,),
                    score=float(hyp.score + gain[i]),
                    att_score=float(hyp.att_score + att_logp[u]),
                    ctc_score=float(hyp.ctc_score + ctc_inc[i]),
                    lm_score=float(hyp.lm_score + lm_logp[u]),
                    dec_state=dec_state,
                    ctc_state=ctc_prefix_select(hyp.ctc_state, u, float(log_psi[i]),
                                                r_nb[i], r_b[i]),
                    lm_state=lm_state,
                ))
        candidates.sort(key=Hypothesis.sort_key)
        active = candidates[:cfg.beam]
        if not active:
            break
    finished.sort(key=Hypothesis.sort_key)
    return finished


def decode_sentence(model: Recognizer, features: np.ndarray, prev_ctx_ids,
                    cfg: BeamConfig, lm: RnnLm | None = None) -> list[Hypothesis]:
    enc, _ = model.encode(features)
    ctc_logp = model.ctc_log_probs(enc)
    c, _ = model.context_vector(prev_ctx_ids)
    lm_c = lm.context_vector(prev_ctx_ids)[0] if lm is not None else None
    return beam_search(model, enc, ctc_logp, c, cfg, lm=lm, lm_c=lm_c)


# ---------------------------------------------------------------------------
# conversation decoding under different context sources
# ---------------------------------------------------------------------------

@dataclass
class SentenceDecode:
    conv_id: str
    sentence: int
    ref_words: list[str]
    hyp_words: list[str]
    hyp_units: tuple[int, ...]
    score: float
    att_score: float
    ctc_score: float
    lm_score: float
    length_bonus: float
    nbest: list[Hypothesis] = field(default_factory=list, repr=False)


def _random_prev(rng: np.random.Generator, pool: list[PreparedConversation],
                 own: PreparedConversation):
    choices = [(ci, si) for ci, conv in enumerate(pool)
               for si in range(len(conv.sentences)) if conv is not own]
    if not choices:
        return None
    ci, si = choices[int(rng.integers(len(choices)))]
    return pool[ci].sentences[si].ctx_ids


def decode_conversation(model: Recognizer, conv: PreparedConversation,
                        tok: Tokenizer, corpus: CorpusSet, cfg: BeamConfig,
                        source: str, lm: RnnLm | None = None,
                        pool: list[PreparedConversation] | None = None,
                        seed: int = 0) -> list[SentenceDecode]:
    """Decode one conversation in sentence order.

    ``source`` selects where the previous-sentence words come from: the
    reference transcript (oracle), the recognizer's own output for the
    previous sentence (predicted), nothing (zero), or a sentence drawn from a
    different conversation (random).
    """
    if source not in CONTEXT_SOURCES:
        raise DecodeError(f"unknown context source {source!r}")
    rng = np.random.default_rng([seed, 61, conv.index])
    results: list[SentenceDecode] = []
    predicted_prev: list[int] | None = None
    for k, s in enumerate(conv.sentences):
        if k == 0 or source == "zero":
            prev = None
        elif source == "oracle":
            prev = conv.sentences[k - 1].ctx_ids
        elif source == "predicted":
            prev = predicted_prev
        else:
            prev = _random_prev(rng, pool if pool is not None else [conv], conv)
        nbest = decode_sentence(model, s.features, prev, cfg, lm=lm)
        best = nbest[0]
        hyp_words = tok.decode(best.units)
        predicted_prev = [corpus.word_id(w) for w in hyp_words]
        results.append(SentenceDecode(
            conv_id=conv.conv_id, sentence=k, ref_words=s.words,
            hyp_words=hyp_words, hyp_units=best.units, score=best.score,
            att_score=best.att_score, ctc_score=best.ctc_score,
            lm_score=best.lm_score, length_bonus=best.length_bonus,
            nbest=nbest,
        ))
    return results


# ---------------------------------------------------------------------------
# word error rate
# ---------------------------------------------------------------------------

@dataclass
class WerCounts:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_len: int = 0
    empty_refs: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def rate(self) -> float:
        """Errors over reference length; an empty reference counts as length 1."""
        return self.errors / max(self.ref_len, 1)

    def add(self, other: "WerCounts"):
        self.substitutions += other.substitutions
        self.insertions += other.insertions
        self.deletions += other.deletions
        self.ref_len += other.ref_len
        self.empty_refs += other.empty_refs


def wer_counts(ref: list[str], hyp: list[str]) -> WerCounts:
    """Levenshtein alignment with unit costs.

    The backtrace prefers the diagonal, so an aligned mismatch is reported
    as one substitution rather than an insertion plus a deletion.
    """
    n, m = len(ref), len(hyp)
    dp = np.zeros((n + 1, m + 1), dtype=np.int64)
    dp[:, 0] = np.arange(n + 1)
    dp[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            same = ref[i - 1] == hyp[j - 1]
            dp[i, j] = min(dp[i - 1, j - 1] + (0 if same else 1),
                           dp[i - 1, j] + 1, dp[i, j - 1] + 1)
    counts = WerCounts(ref_len=n, empty_refs=int(n == 0))
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dp[i, j] == dp[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1):
            if ref[i - 1] != hyp[j - 1]:
                counts.substitutions += 1
            i, j = i - 1, j - 1
        elif i > 0 and dp[i, j] == dp[i - 1, j] + 1:
            counts.deletions += 1
            i -= 1
        else:
            counts.insertions += 1
            j -= 1
    return counts


def conversation_wer(decodes: list[SentenceDecode]) -> WerCounts:
    total = WerCounts()
    for d in decodes:
        total.add(wer_counts(d.ref_words, d.hyp_words))
    return total


# ---------------------------------------------------------------------------
# split evaluation
# ---------------------------------------------------------------------------

@dataclass
class SplitEval:
    source: str
    sentences: list[SentenceDecode]
    conv_wer: dict[str, float]
    counts: WerCounts
    median_conv_wer: float
    wer: float


def evaluate(model: Recognizer, data: list[PreparedConversation], tok: Tokenizer,
             corpus: CorpusSet, cfg: BeamConfig, source: str,
             lm: RnnLm | None = None, seed: int = 0) -> SplitEval:
    """Decode a whole split under one context source."""
    sentences: list[SentenceDecode] = []
    conv_wer: dict[str, float] = {}
    total = WerCounts()
    for conv in data:
        decodes = decode_conversation(model, conv, tok, corpus, cfg, source,
                                      lm=lm, pool=data, seed=seed)
        counts = conversation_wer(decodes)
        conv_wer[conv.conv_id] = counts.rate
        total.add(counts)
        sentences.extend(decodes)
    median = float(np.median(list(conv_wer.values()))) if conv_wer else float("nan")
    return SplitEval(source=source, sentences=sentences, conv_wer=conv_wer,
                     counts=total, median_conv_wer=median, wer=total.rate)
