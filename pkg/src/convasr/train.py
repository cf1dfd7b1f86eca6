"""Training loops: conversation-serialized batching, AdaDelta with gradient
clipping, dev-metric early stopping, and decoder pretraining on transcripts.

Minibatches are built so that batch ``t`` holds sentence ``t`` of each
currently active conversation. That keeps every conversation's sentences in
order across steps, which is what lets the context summary of sentence
``k - 1`` exist before sentence ``k`` is trained on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .corpus import CorpusSet
from .model import Recognizer, RnnLm
from .tokenizer import Tokenizer


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# batch planning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BatchItem:
    conv: int
    sentence: int


def make_batch_plan(sentence_counts, batch_size: int, seed) -> list[list[BatchItem]]:
    """Conversation-serialized minibatch schedule.

    ``sentence_counts[i]`` is the number of sentences in conversation ``i``.
    Conversations are shuffled once, then up to ``batch_size`` of them are
    active at a time; each planned batch takes the next unseen sentence of
    every active conversation, and an exhausted slot is refilled with the
    next unstarted conversation beginning at sentence 0.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    counts = list(sentence_counts)
    rng = np.random.default_rng(seed)
    order = [int(i) for i in rng.permutation(len(counts)) if counts[int(i)] > 0]
    queue = iter(order)
    slots: list[list[int]] = []   # [conv, next sentence]
    for conv in queue:
        slots.append([conv, 0])
        if len(slots) == batch_size:
            break
    plan: list[list[BatchItem]] = []
    while slots:
        plan.append([BatchItem(conv=c, sentence=s) for c, s in slots])
        kept = []
        for slot in slots:
            slot[1] += 1
            if slot[1] < counts[slot[0]]:
                kept.append(slot)
            else:
                refill = next(queue, None)
                if refill is not None:
                    kept.append([refill, 0])
        slots = kept
    return plan


# ---------------------------------------------------------------------------
# prepared data
# ---------------------------------------------------------------------------

@dataclass
class PreparedSentence:
    words: list[str]
    units: list[int]
    ctx_ids: list[int]
    features: np.ndarray = field(repr=False)


@dataclass
class PreparedConversation:
    conv_id: str
    index: int
    sentences: list[PreparedSentence]


def prepare_split(corpus: CorpusSet, tok: Tokenizer, split: str) -> list[PreparedConversation]:
    """Tokenize one split and attach context word ids per sentence."""
    prepared = []
    for i, conv in enumerate(corpus.split(split)):
        sentences = []
        for s in conv.sentences:
            words = corpus.words_of(s)
            sentences.append(PreparedSentence(
                words=words,
                units=tok.encode(words),
                ctx_ids=[corpus.word_id(w) for w in words],
                features=s.features,
            ))
        prepared.append(PreparedConversation(conv_id=conv.conv_id, index=i,
                                             sentences=sentences))
    return prepared


def _prev_ctx(conv: PreparedConversation, k: int):
    return conv.sentences[k - 1].ctx_ids if k > 0 else None


# ---------------------------------------------------------------------------
# shared optimization driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    patience: int = 3
    min_epochs: int = 0
    clip_norm: float = 5.0
    rho: float = 0.95
    eps: float = 1e-8
    seed: int = 0


@dataclass
class TrainResult:
    epochs_run: int
    best_epoch: int
    best_dev_metric: float
    trace: list[tuple[int, float, float]]   # (epoch, train metric, dev metric)


def _fit(params: nc.ParamSet, train_data: list[PreparedConversation],
         cfg: TrainConfig, plan_salt: int, item_loss, dev_metric,
         summarize=lambda total, weight: total / max(weight, 1),
         mask_grads=None) -> TrainResult:
    """Epoch loop shared by every trainable object in the package.

    ``item_loss(conv, k)`` runs forward and backward for one sentence and
    returns ``(loss_sum, weight)``; gradients are averaged per batch, clipped,
    and applied with AdaDelta. ``dev_metric()`` is the early-stopping value
    (lower is better, NaN disables stopping); the best snapshot is restored.
    """
    opt = nc.AdaDeltaState(params, rho=cfg.rho, eps=cfg.eps)
    counts = [len(c.sentences) for c in train_data]
    best = float("inf")
    best_epoch = 0
    best_values = params.copy_values()
    bad = 0
    trace: list[tuple[int, float, float]] = []
    epochs_run = 0
    for epoch in range(1, cfg.epochs + 1):
        epochs_run = epoch
        plan = make_batch_plan(counts, cfg.batch_size, [cfg.seed, plan_salt, epoch])
        total = 0.0
        weight = 0
        for batch in plan:
            params.zero_grads()
            for item in batch:
                conv = train_data[item.conv]
                try:
                    loss_sum, w = item_loss(conv, item.sentence)
                except nc.GradientError:
                    raise
                except Exception as exc:
                    raise TrainingError(
                        f"loss failed on {conv.conv_id} sentence {item.sentence}: {exc}"
                    ) from exc
                total += loss_sum
                weight += w
            if mask_grads is not None:
                mask_grads(params)
            for t in params.tensors():
                t.grad *= 1.0 / len(batch)
            nc.clip_grad_norm(params, cfg.clip_norm)
            nc.adadelta_update(params, opt)
        train_metric = summarize(total, weight)
        if not math.isfinite(train_metric):
            raise TrainingError(f"training metric diverged ({train_metric!r})")
        dev = dev_metric()
        trace.append((epoch, train_metric, dev))
        if math.isnan(dev):
            best_values = params.copy_values()
            best_epoch = epoch
            continue
        if dev < best:
            best = dev
            best_epoch = epoch
            best_values = params.copy_values()
            bad = 0
        else:
            bad += 1
            # slow pathways (the context merge after a bootstrap) need a
            # training floor before the patience counter may stop the run
            if bad >= cfg.patience and epoch >= cfg.min_epochs:
                break
    params.load_values(best_values)
    return TrainResult(epochs_run=epochs_run, best_epoch=best_epoch,
                       best_dev_metric=best if math.isfinite(best) else float("nan"),
                       trace=trace)


# ---------------------------------------------------------------------------
# recognizer training
# ---------------------------------------------------------------------------

def dev_loss(model: Recognizer, dev_data: list[PreparedConversation]) -> float:
    """Mean per-sentence joint loss with true previous-sentence context."""
    total = 0.0
    n = 0
    for conv in dev_data:
        for k, s in enumerate(conv.sentences):
            res = model.joint_loss(s.features, s.units, _prev_ctx(conv, k),
                                   backward=False)
            total += res.loss
            n += 1
    return total / n if n else float("nan")


def train(model: Recognizer, train_data: list[PreparedConversation],
          dev_data: list[PreparedConversation], cfg: TrainConfig) -> TrainResult:
    """Joint CTC/attention training; dev joint loss decides early stopping."""

    def item_loss(conv: PreparedConversation, k: int):
        s = conv.sentences[k]
        res = model.joint_loss(s.features, s.units, _prev_ctx(conv, k),
                               conv_index=conv.index)
        return res.loss, 1

    return _fit(model.params, train_data, cfg, plan_salt=41,
                item_loss=item_loss, dev_metric=lambda: dev_loss(model, dev_data))


PRETRAIN_PREFIXES = ("dec_embed", "dec1_", "dec2_", "out_", "merge_", "ctx")


def _mask_non_decoder_grads(params: nc.ParamSet):
    for name, t in params.items():
        if not name.startswith(PRETRAIN_PREFIXES):
            t.grad[...] = 0.0


def pretrain_dev_loss(model: Recognizer, dev_data: list[PreparedConversation]) -> float:
    total, n = 0.0, 0
    for conv in dev_data:
        for s in conv.sentences:
            nll, terms = model.decoder_text_loss(s.units, None, backward=False)
            total += nll / terms
            n += 1
    return total / n if n else float("nan")


def pretrain_decoder(model: Recognizer, train_data: list[PreparedConversation],
                     dev_data: list[PreparedConversation], cfg: TrainConfig) -> TrainResult:
    """Train only decoder-side tensors on transcripts, no acoustics.

    Encoder, CTC head, and attention tensors keep their values; their
    gradients are zeroed before every update, which makes AdaDelta leave
    them untouched. Sentences are fed in isolation (zero context) so the
    warm start cannot teach the decoder to lean on the context gain
    before it has ever seen acoustic evidence.
    """

    def item_loss(conv: PreparedConversation, k: int):
        return model.decoder_text_loss(conv.sentences[k].units, None)

    return _fit(model.params, train_data, cfg, plan_salt=43,
                item_loss=item_loss,
                dev_metric=lambda: pretrain_dev_loss(model, dev_data),
                mask_grads=_mask_non_decoder_grads)


# ---------------------------------------------------------------------------
# language model training and perplexity
# ---------------------------------------------------------------------------

def lm_perplexity(lm: RnnLm, data: list[PreparedConversation]) -> float:
    """exp(mean per-token NLL) with true previous-sentence context."""
    total, terms = 0.0, 0
    for conv in data:
        for k, s in enumerate(conv.sentences):
            nll, n = lm.sequence_nll(s.units, _prev_ctx(conv, k), backward=False)
            total += nll
            terms += n
    if terms == 0:
        return float("nan")
    return float(np.exp(total / terms))


def train_lm(lm: RnnLm, train_data: list[PreparedConversation],
             dev_data: list[PreparedConversation], cfg: TrainConfig) -> TrainResult:
    """Unit LM training; dev perplexity decides early stopping."""

    def item_loss(conv: PreparedConversation, k: int):
        s = conv.sentences[k]
        return lm.sequence_nll(s.units, _prev_ctx(conv, k))

    return _fit(lm.params, train_data, cfg, plan_salt=47,
                item_loss=item_loss,
                dev_metric=lambda: lm_perplexity(lm, dev_data),
                summarize=lambda total, weight: float(np.exp(total / max(weight, 1))))
