"""Joint CTC/attention word recognizer with a context-conditioned decoder.

The encoder stacks consecutive frames and runs a projected BLSTM pyramid.
Two heads share it: a CTC head over the encoding, and a two-layer LSTM
decoder with location-based attention. Before each decoder step the top
recurrent hidden state is merged with a summary vector of the previous
sentence, ``d_hat = tanh(W d + V c + b)``, and ``d_hat`` replaces the top
hidden state for that step. The no-context variant runs the same merge
without the ``V c`` term, so loading it into a context model whose ``V`` is
zero reproduces it exactly.

A recurrent unit language model with the same merge lives here too; it is
used for shallow fusion during decoding and for perplexity studies.

All forward passes build caches for the hand-written backward passes in
:mod:`convasr.numcore`; gradients accumulate into ``ParamSet`` buffers.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from . import numcore as nc
from .ctc import ctc_loss

CONTEXT_MODES = ("baseline", "mean", "att")


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int
    vocab_size: int
    stack: int = 2
    enc_layers: int = 2
    enc_hidden: int = 24
    enc_proj: int = 24
    dec_hidden: int = 32
    embed_dim: int = 16
    attn_dim: int = 16
    attn_filters: int = 4
    attn_kernel: int = 7
    ctx_mode: str = "baseline"
    ctx_vocab_size: int = 0
    ctx_dim: int = 16
    num_conversations: int = 0
    lambda_ctc: float = 0.5
    conv_id_weight: float = 0.1

    def __post_init__(self):
        if self.ctx_mode not in CONTEXT_MODES:
            raise ModelConfigError(f"ctx_mode must be one of {CONTEXT_MODES}")
        if min(self.feature_dim, self.vocab_size, self.stack, self.enc_layers,
               self.enc_hidden, self.enc_proj, self.dec_hidden, self.embed_dim,
               self.attn_dim, self.attn_filters) < 1:
            raise ModelConfigError("all size fields must be >= 1")
        if self.attn_kernel < 1 or self.attn_kernel % 2 == 0:
            raise ModelConfigError("attn_kernel must be odd and >= 1")
        if self.uses_context and self.ctx_vocab_size < 1:
            raise ModelConfigError(f"ctx_mode {self.ctx_mode!r} needs ctx_vocab_size >= 1")
        if not 0.0 <= self.lambda_ctc <= 1.0:
            raise ModelConfigError("lambda_ctc must be in [0, 1]")
        if self.conv_id_weight < 0:
            raise ModelConfigError("conv_id_weight must be >= 0")

    @property
    def uses_context(self) -> bool:
        return self.ctx_mode != "baseline"


@dataclass
class JointLoss:
    loss: float
    ctc_nll: float
    att_nll: float
    convid_nll: float
    n_units: int


@dataclass
class DecoderState:
    h1: np.ndarray
    c1: np.ndarray
    h2: np.ndarray
    c2: np.ndarray
    alignment: np.ndarray


def stack_frames(features: np.ndarray, stack: int) -> np.ndarray:
    """Concatenate groups of ``stack`` frames; the tail is zero padded."""
    tlen, dim = features.shape
    out_len = -(-tlen // stack)
    padded = np.zeros((out_len * stack, dim))
    padded[:tlen] = features
    return padded.reshape(out_len, stack * dim)


def _uniform_init(params: nc.ParamSet, seed: int):
    rng = np.random.default_rng([seed, 23])
    for t in params.tensors():
        t.value[...] = rng.uniform(-0.1, 0.1, size=t.shape)


def _set_forget_bias(lstm: nc.LstmParams, value: float = 1.0):
    h = lstm.hidden
    lstm.b.value[h:2 * h] = value


class Recognizer:
    def __init__(self, config: ModelConfig):
        self.config = config
        self.params = nc.ParamSet()
        self._build()

    # ------------------------------------------------------------------
    # parameter registration
    # ------------------------------------------------------------------

    def _lstm(self, prefix: str, in_dim: int, hidden: int) -> nc.LstmParams:
        p = self.params
        return nc.LstmParams(
            wx=p.add(f"{prefix}_wx", np.zeros((4 * hidden, in_dim))),
            wh=p.add(f"{prefix}_wh", np.zeros((4 * hidden, hidden))),
            b=p.add(f"{prefix}_b", np.zeros(4 * hidden)),
        )

    def _build(self):
        cfg = self.config
        p = self.params
        self._enc = []
        in_dim = cfg.feature_dim * cfg.stack
        for layer in range(cfg.enc_layers):
            fwd = self._lstm(f"enc{layer}_fwd", in_dim, cfg.enc_hidden)
            bwd = self._lstm(f"enc{layer}_bwd", in_dim, cfg.enc_hidden)
            proj_w = p.add(f"enc{layer}_proj_w", np.zeros((cfg.enc_proj, 2 * cfg.enc_hidden)))
            proj_b = p.add(f"enc{layer}_proj_b", np.zeros(cfg.enc_proj))
            self._enc.append((fwd, bwd, proj_w, proj_b))
            in_dim = cfg.enc_proj
        p.add("ctc_w", np.zeros((cfg.vocab_size, cfg.enc_proj)))
        p.add("ctc_b", np.zeros(cfg.vocab_size))

        p.add("dec_embed", np.zeros((cfg.vocab_size, cfg.embed_dim)))
        p.add("merge_w", np.zeros((cfg.dec_hidden, cfg.dec_hidden)))
        p.add("merge_b", np.zeros(cfg.dec_hidden))
        if cfg.uses_context:
            p.add("merge_v", np.zeros((cfg.dec_hidden, cfg.ctx_dim)))
        self._att = nc.AttentionParams(
            query_w=p.add("att_query_w", np.zeros((cfg.attn_dim, cfg.dec_hidden))),
            enc_w=p.add("att_enc_w", np.zeros((cfg.attn_dim, cfg.enc_proj))),
            loc_w=p.add("att_loc_w", np.zeros((cfg.attn_dim, cfg.attn_filters))),
            loc_filters=p.add("att_loc_filters", np.zeros((cfg.attn_filters, cfg.attn_kernel))),
            score_v=p.add("att_score_v", np.zeros(cfg.attn_dim)),
            bias=p.add("att_bias", np.zeros(cfg.attn_dim)),
        )
        self._dec1 = self._lstm("dec1", cfg.embed_dim + cfg.enc_proj, cfg.dec_hidden)
        self._dec2 = self._lstm("dec2", cfg.dec_hidden, cfg.dec_hidden)
        p.add("out_w", np.zeros((cfg.vocab_size, cfg.dec_hidden)))
        p.add("out_b", np.zeros(cfg.vocab_size))

        if cfg.uses_context:
            p.add("ctx_embed", np.zeros((cfg.ctx_vocab_size, cfg.ctx_dim)))
        if cfg.ctx_mode == "att":
            p.add("ctxatt_w", np.zeros((cfg.attn_dim, cfg.ctx_dim)))
            p.add("ctxatt_b", np.zeros(cfg.attn_dim))
            p.add("ctxatt_v", np.zeros(cfg.attn_dim))
            if cfg.num_conversations > 0:
                p.add("conv_w", np.zeros((cfg.num_conversations, cfg.ctx_dim)))
                p.add("conv_b", np.zeros(cfg.num_conversations))

    def init_params(self, seed: int):
        _uniform_init(self.params, seed)
        for fwd, bwd, _, _ in self._enc:
            _set_forget_bias(fwd)
            _set_forget_bias(bwd)
        _set_forget_bias(self._dec1)
        _set_forget_bias(self._dec2)

    def num_params(self) -> int:
        return sum(t.value.size for t in self.params.tensors())

    # ------------------------------------------------------------------
    # encoder
    # ------------------------------------------------------------------

    def encode(self, features: np.ndarray):
        xs = stack_frames(features, self.config.stack)
        caches = []
        for fwd, bwd, proj_w, proj_b in self._enc:
            hidden, bc = nc.blstm(xs, fwd, bwd)
            pre, lc = nc.linear(hidden, proj_w, proj_b)
            xs, tc = nc.tanh(pre)
            caches.append((bc, lc, tc))
        return xs, caches

    def _encode_backward(self, d_enc: np.ndarray, caches):
        d = d_enc
        for bc, lc, tc in reversed(caches):
            dpre = nc.tanh_backward(d, tc)
            dhidden = nc.linear_backward(dpre, lc)
            d = nc.blstm_backward(dhidden, bc)

    def ctc_log_probs(self, enc: np.ndarray) -> np.ndarray:
        logits, _ = nc.linear(enc, self.params["ctc_w"], self.params["ctc_b"])
        logp, _ = nc.log_softmax(logits)
        return logp

    # ------------------------------------------------------------------
    # context summary of the previous sentence
    # ------------------------------------------------------------------

    def context_vector(self, prev_word_ids):
        """Summary vector ``c`` for the decoder merge.

        ``prev_word_ids`` indexes the context embedding table; ``None`` or an
        empty sequence (start of a conversation) yields the zero vector.
        """
        cfg = self.config
        if not cfg.uses_context or not prev_word_ids:
            return np.zeros(cfg.ctx_dim), ("zero",)
        table = self.params["ctx_embed"]
        rows = [nc.embed(w, table) for w in prev_word_ids]
        stacked = np.stack([vec for vec, _ in rows])
        if cfg.ctx_mode == "mean":
            c = stacked.mean(axis=0)
            return c, ("mean", rows)
        pre, lc = nc.linear(stacked, self.params["ctxatt_w"], self.params["ctxatt_b"])
        act, tc = nc.tanh(pre)
        scores = act @ self.params["ctxatt_v"].value
        alpha, smc = nc.softmax(scores)
        c = alpha @ stacked
        return c, ("att", rows, stacked, lc, tc, act, smc, alpha)

    def _context_backward(self, d_c: np.ndarray, cache):
        kind = cache[0]
        if kind == "zero":
            return
        if kind == "mean":
            rows = cache[1]
            share = d_c / len(rows)
            for _, ec in rows:
                nc.embed_backward(share, ec)
            return
        _, rows, stacked, lc, tc, act, smc, alpha = cache
        d_stacked = np.outer(alpha, d_c)
        d_alpha = stacked @ d_c
        d_scores = nc.softmax_backward(d_alpha, smc)
        self.params["ctxatt_v"].add_grad(act.T @ d_scores)
        d_act = np.outer(d_scores, self.params["ctxatt_v"].value)
        d_pre = nc.tanh_backward(d_act, tc)
        d_stacked += nc.linear_backward(d_pre, lc)
        for i, (_, ec) in enumerate(rows):
            nc.embed_backward(d_stacked[i], ec)

    # ------------------------------------------------------------------
    # decoder
    # ------------------------------------------------------------------

    def start_state(self, enc_len: int) -> DecoderState:
        h = self.config.dec_hidden
        return DecoderState(h1=np.zeros(h), c1=np.zeros(h), h2=np.zeros(h),
                            c2=np.zeros(h), alignment=np.full(enc_len, 1.0 / enc_len))

    def _merge(self, d_prev: np.ndarray, c: np.ndarray | None):
        pre, lc_w = nc.linear(d_prev, self.params["merge_w"], self.params["merge_b"])
        lc_v = None
        if "merge_v" in self.params:
            vterm, lc_v = nc.linear(c, self.params["merge_v"], None)
            pre = pre + vterm
        d_hat, tc = nc.tanh(pre)
        return d_hat, (lc_w, lc_v, tc)

    def _merge_backward(self, d_dhat: np.ndarray, cache):
        """Returns (d_dprev, d_c); d_c is None without a context term."""
        lc_w, lc_v, tc = cache
        d_pre = nc.tanh_backward(d_dhat, tc)
        d_dprev = nc.linear_backward(d_pre, lc_w)
        d_c = nc.linear_backward(d_pre, lc_v) if lc_v is not None else None
        return d_dprev, d_c

    def _dec_step(self, enc: np.ndarray, c: np.ndarray | None, y_prev: int,
                  state: DecoderState):
        d_hat, mc = self._merge(state.h2, c)
        att_ctx, align, ac = nc.location_attention(d_hat, enc, state.alignment, self._att)
        emb, ec = nc.embed(y_prev, self.params["dec_embed"])
        x1 = np.concatenate([emb, att_ctx])
        h1, c1, l1c = nc.lstm_step(x1, state.h1, state.c1, self._dec1)
        h2, c2, l2c = nc.lstm_step(h1, d_hat, state.c2, self._dec2)
        logits, oc = nc.linear(h2, self.params["out_w"], self.params["out_b"])
        new_state = DecoderState(h1=h1, c1=c1, h2=h2, c2=c2, alignment=align)
        return logits, new_state, (mc, ac, ec, l1c, l2c, oc)

    def step_log_probs(self, enc: np.ndarray, c: np.ndarray | None, y_prev: int,
                       state: DecoderState):
        """Decode-time step: next-unit log-probabilities and the new state."""
        logits, new_state, _ = self._dec_step(enc, c, y_prev, state)
        logp, _ = nc.log_softmax(logits)
        return logp, new_state

    def _steps_backward(self, d_logits_seq, step_caches):
        """Backpropagate through the decoder recurrence.

        Returns ``(d_enc, d_c)`` with ``d_c`` summed over the per-step merge
        uses (None when the model has no context term).
        """
        cfg = self.config
        h = cfg.dec_hidden
        d_enc = np.zeros_like(step_caches[0][1][1])
        d_c_total = None
        dh1 = np.zeros(h)
        dc1 = np.zeros(h)
        dh2 = np.zeros(h)      # grad on h2 as the next step's merge input
        dc2 = np.zeros(h)
        dalign = np.zeros(d_enc.shape[0])
        for d_logits, (mc, ac, ec, l1c, l2c, oc) in zip(
                reversed(d_logits_seq), reversed(step_caches)):
            dh2_total = nc.linear_backward(d_logits, oc) + dh2
            dh1_step, d_dhat_rec, dc2 = nc.lstm_step_backward(dh2_total, dc2, l2c)
            dx1, dh1, dc1 = nc.lstm_step_backward(dh1_step + dh1, dc1, l1c)
            demb = dx1[:cfg.embed_dim]
            datt_ctx = dx1[cfg.embed_dim:]
            nc.embed_backward(demb, ec)
            d_dhat_att, d_enc_step, dalign = nc.location_attention_backward(
                datt_ctx, dalign, ac)
            d_enc += d_enc_step
            dh2, d_c = self._merge_backward(d_dhat_rec + d_dhat_att, mc)
            if d_c is not None:
                d_c_total = d_c if d_c_total is None else d_c_total + d_c
        return d_enc, d_c_total

    # ------------------------------------------------------------------
    # joint objective
    # ------------------------------------------------------------------

    def joint_loss(self, features: np.ndarray, units, prev_word_ids=None,
                   conv_index: int | None = None, backward: bool = True) -> JointLoss:
        """CTC/attention loss for one sentence; accumulates gradients.

        ``units`` is the reference unit-id sequence (no start or end marks).
        ``prev_word_ids`` feeds the context summary. In attentional context
        mode with ``conv_index`` set, a conversation-classification term with
        weight ``conv_id_weight`` is added.
        """
        from .tokenizer import SOS_EOS_ID

        cfg = self.config
        units = list(units)
        if not units:
            raise ModelConfigError("joint_loss needs at least one target unit")
        enc, enc_cache = self.encode(features)

        ctc_logits, ctc_lc = nc.linear(enc, self.params["ctc_w"], self.params["ctc_b"])
        ctc_logp, _ = nc.log_softmax(ctc_logits)
        ctc_res = ctc_loss(ctc_logp, units)

        c, ctx_cache = self.context_vector(prev_word_ids) if cfg.uses_context else (None, ("zero",))

        inputs = [SOS_EOS_ID] + units
        targets = units + [SOS_EOS_ID]
        state = self.start_state(enc.shape[0])
        step_caches = []
        ce_caches = []
        att_nll = 0.0
        for y_prev, y in zip(inputs, targets):
            logits, state, cache = self._dec_step(enc, c, y_prev, state)
            loss_t, ce_cache = nc.cross_entropy(logits, y)
            att_nll += float(loss_t)
            step_caches.append(cache)
            ce_caches.append(ce_cache)

        convid_nll = 0.0
        conv_ce = None
        if (cfg.ctx_mode == "att" and conv_index is not None
                and cfg.num_conversations > 0):
            conv_logits, conv_lc = nc.linear(c, self.params["conv_w"], self.params["conv_b"])
            loss_c, conv_ce_cache = nc.cross_entropy(conv_logits, conv_index)
            convid_nll = float(loss_c)
            conv_ce = (conv_ce_cache, conv_lc)

        lam = cfg.lambda_ctc
        total = (lam * ctc_res.nll + (1.0 - lam) * att_nll
                 + cfg.conv_id_weight * convid_nll)
        result = JointLoss(loss=float(total), ctc_nll=float(ctc_res.nll),
                           att_nll=att_nll, convid_nll=convid_nll,
                           n_units=len(units))
        if not backward:
            return result

        d_logits_seq = [nc.cross_entropy_backward(1.0 - lam, cc) for cc in ce_caches]
        d_enc, d_c = self._steps_backward(d_logits_seq, step_caches)
        if conv_ce is not None:
            ce_cache, conv_lc = conv_ce
            d_conv_logits = nc.cross_entropy_backward(cfg.conv_id_weight, ce_cache)
            d_c_head = nc.linear_backward(d_conv_logits, conv_lc)
            d_c = d_c_head if d_c is None else d_c + d_c_head
        if d_c is not None:
            self._context_backward(d_c, ctx_cache)
        d_enc += nc.linear_backward(lam * ctc_res.grad_logits, ctc_lc)
        self._encode_backward(d_enc, enc_cache)
        return result


    def decoder_text_loss(self, units, prev_word_ids=None, backward: bool = True):
        """Next-unit cross entropy against a single silent encoder frame.

        Lets the decoder pretrain on transcripts alone: attention still runs
        but its context summary is identically zero. Returns
        ``(nll, n_terms)``.
        """
        from .tokenizer import SOS_EOS_ID

        cfg = self.config
        units = list(units)
        if not units:
            raise ModelConfigError("decoder_text_loss needs at least one unit")
        enc = np.zeros((1, cfg.enc_proj))
        c, ctx_cache = self.context_vector(prev_word_ids) if cfg.uses_context else (None, ("zero",))
        state = self.start_state(1)
        step_caches = []
        ce_caches = []
        nll = 0.0
        for y_prev, y in zip([SOS_EOS_ID] + units, units + [SOS_EOS_ID]):
            logits, state, cache = self._dec_step(enc, c, y_prev, state)
            loss_t, ce_cache = nc.cross_entropy(logits, y)
            nll += float(loss_t)
            step_caches.append(cache)
            ce_caches.append(ce_cache)
        if backward:
            d_logits_seq = [nc.cross_entropy_backward(1.0, cc) for cc in ce_caches]
            _, d_c = self._steps_backward(d_logits_seq, step_caches)
            if d_c is not None:
                self._context_backward(d_c, ctx_cache)
        return nll, len(units) + 1


# ---------------------------------------------------------------------------
# bootstrap and checkpoints
# ---------------------------------------------------------------------------

def bootstrap_recognizer(base: Recognizer, config: ModelConfig, seed: int) -> Recognizer:
    """Start a context model from a trained no-context model.

    All shared tensors are copied, the context gain ``merge_v`` starts at
    zero, and context-only tensors get fresh random values. With ``merge_v``
    zero the new model scores every sentence exactly like ``base``.
    """
    if not config.uses_context:
        raise ModelConfigError("bootstrap target must use a context mode")
    model = Recognizer(config)
    model.init_params(seed)
    base_values = base.params.copy_values()
    missing = [n for n in base_values if n not in model.params]
    if missing:
        raise ModelConfigError(f"bootstrap shape mismatch, extra tensors {missing}")
    model.params.load_values(base_values)
    model.params["merge_v"].value[...] = 0.0
    return model


def _config_meta(config) -> dict:
    return dataclasses.asdict(config)


def save_recognizer(model: Recognizer, path, extra: dict | None = None):
    meta = {"kind": "recognizer", "config": _config_meta(model.config)}
    if extra:
        meta["extra"] = extra
    ckpt.save_checkpoint(path, model.params, meta)


def load_recognizer(path) -> tuple[Recognizer, dict]:
    meta, values = ckpt.load_checkpoint(path)
    if meta.get("kind") != "recognizer":
        raise ckpt.CheckpointError(f"{path}: not a recognizer checkpoint")
    model = Recognizer(ModelConfig(**meta["config"]))
    model.params.load_values(values)
    return model, meta


# ---------------------------------------------------------------------------
# recurrent unit language model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LmConfig:
    vocab_size: int
    embed_dim: int = 16
    hidden: int = 32
    conversational: bool = False
    ctx_vocab_size: int = 0
    ctx_dim: int = 16

    def __post_init__(self):
        if min(self.vocab_size, self.embed_dim, self.hidden) < 1:
            raise ModelConfigError("all LM size fields must be >= 1")
        if self.conversational and self.ctx_vocab_size < 1:
            raise ModelConfigError("conversational LM needs ctx_vocab_size >= 1")


@dataclass
class LmState:
    h1: np.ndarray
    c1: np.ndarray
    h2: np.ndarray
    c2: np.ndarray


class RnnLm:
    """Two-layer LSTM unit LM sharing the recognizer's hidden-state merge.

    The top recurrent hidden state passes through
    ``tanh(Wm h + V c + bm)`` before reuse; the ``V c`` term exists only in
    conversational mode, so a conversational LM with ``V`` zero matches the
    plain one exactly.
    """

    def __init__(self, config: LmConfig):
        self.config = config
        self.params = nc.ParamSet()
        p = self.params
        cfg = config
        p.add("lm_embed", np.zeros((cfg.vocab_size, cfg.embed_dim)))
        self._l1 = nc.LstmParams(
            wx=p.add("lm1_wx", np.zeros((4 * cfg.hidden, cfg.embed_dim))),
            wh=p.add("lm1_wh", np.zeros((4 * cfg.hidden, cfg.hidden))),
            b=p.add("lm1_b", np.zeros(4 * cfg.hidden)),
        )
        self._l2 = nc.LstmParams(
            wx=p.add("lm2_wx", np.zeros((4 * cfg.hidden, cfg.hidden))),
            wh=p.add("lm2_wh", np.zeros((4 * cfg.hidden, cfg.hidden))),
            b=p.add("lm2_b", np.zeros(4 * cfg.hidden)),
        )
        p.add("lm_merge_w", np.zeros((cfg.hidden, cfg.hidden)))
        p.add("lm_merge_b", np.zeros(cfg.hidden))
        if cfg.conversational:
            p.add("lm_merge_v", np.zeros((cfg.hidden, cfg.ctx_dim)))
            p.add("lm_ctx_embed", np.zeros((cfg.ctx_vocab_size, cfg.ctx_dim)))
        p.add("lm_out_w", np.zeros((cfg.vocab_size, cfg.hidden)))
        p.add("lm_out_b", np.zeros(cfg.vocab_size))

    def init_params(self, seed: int):
        _uniform_init(self.params, seed)
        _set_forget_bias(self._l1)
        _set_forget_bias(self._l2)

    def num_params(self) -> int:
        return sum(t.value.size for t in self.params.tensors())

    def context_vector(self, prev_word_ids):
        cfg = self.config
        if not cfg.conversational or not prev_word_ids:
            dim = cfg.ctx_dim if cfg.conversational else 0
            return (np.zeros(dim) if cfg.conversational else None), ("zero",)
        rows = [nc.embed(w, self.params["lm_ctx_embed"]) for w in prev_word_ids]
        c = np.stack([vec for vec, _ in rows]).mean(axis=0)
        return c, ("mean", rows)

    def _context_backward(self, d_c, cache):
        if cache[0] == "zero":
            return
        rows = cache[1]
        share = d_c / len(rows)
        for _, ec in rows:
            nc.embed_backward(share, ec)

    def start_state(self) -> LmState:
        h = self.config.hidden
        return LmState(h1=np.zeros(h), c1=np.zeros(h), h2=np.zeros(h), c2=np.zeros(h))

    def _step(self, c, y_prev: int, state: LmState):
        pre, lc_w = nc.linear(state.h2, self.params["lm_merge_w"], self.params["lm_merge_b"])
        lc_v = None
        if "lm_merge_v" in self.params:
            vterm, lc_v = nc.linear(c, self.params["lm_merge_v"], None)
            pre = pre + vterm
        merged, tc = nc.tanh(pre)
        emb, ec = nc.embed(y_prev, self.params["lm_embed"])
        h1, c1, l1c = nc.lstm_step(emb, state.h1, state.c1, self._l1)
        h2, c2, l2c = nc.lstm_step(h1, merged, state.c2, self._l2)
        logits, oc = nc.linear(h2, self.params["lm_out_w"], self.params["lm_out_b"])
        new_state = LmState(h1=h1, c1=c1, h2=h2, c2=c2)
        return logits, new_state, ((lc_w, lc_v, tc), ec, l1c, l2c, oc)

    def step_log_probs(self, c, y_prev: int, state: LmState):
        logits, new_state, _ = self._step(c, y_prev, state)
        logp, _ = nc.log_softmax(logits)
        return logp, new_state

    def sequence_nll(self, units, prev_word_ids=None, backward: bool = True):
        """Total NLL of ``units`` plus the end mark; returns (nll, n_terms)."""
        from .tokenizer import SOS_EOS_ID

        units = list(units)
        c, ctx_cache = self.context_vector(prev_word_ids)
        state = self.start_state()
        caches = []
        ce_caches = []
        nll = 0.0
        for y_prev, y in zip([SOS_EOS_ID] + units, units + [SOS_EOS_ID]):
            logits, state, cache = self._step(c, y_prev, state)
            loss_t, ce_cache = nc.cross_entropy(logits, y)
            nll += float(loss_t)
            caches.append(cache)
            ce_caches.append(ce_cache)
        n_terms = len(units) + 1
        if not backward:
            return nll, n_terms

        h = self.config.hidden
        dh1 = np.zeros(h)
        dc1 = np.zeros(h)
        dh2 = np.zeros(h)
        dc2 = np.zeros(h)
        d_c_total = None
        for ce_cache, (mc, ec, l1c, l2c, oc) in zip(reversed(ce_caches), reversed(caches)):
            d_logits = nc.cross_entropy_backward(1.0, ce_cache)
            dh2_total = nc.linear_backward(d_logits, oc) + dh2
            dh1_step, d_merged, dc2 = nc.lstm_step_backward(dh2_total, dc2, l2c)
            demb, dh1, dc1 = nc.lstm_step_backward(dh1_step + dh1, dc1, l1c)
            nc.embed_backward(demb, ec)
            lc_w, lc_v, tc = mc
            d_pre = nc.tanh_backward(d_merged, tc)
            dh2 = nc.linear_backward(d_pre, lc_w)
            if lc_v is not None:
                d_c = nc.linear_backward(d_pre, lc_v)
                d_c_total = d_c if d_c_total is None else d_c_total + d_c
        if d_c_total is not None:
            self._context_backward(d_c_total, ctx_cache)
        return nll, n_terms


def bootstrap_lm(base: RnnLm, config: LmConfig, seed: int) -> RnnLm:
    """Conversational LM started from a plain LM; ``lm_merge_v`` begins zero."""
    if not config.conversational:
        raise ModelConfigError("bootstrap target must be conversational")
    lm = RnnLm(config)
    lm.init_params(seed)
    lm.params.load_values(base.params.copy_values())
    lm.params["lm_merge_v"].value[...] = 0.0
    return lm


def save_lm(lm: RnnLm, path, extra: dict | None = None):
    meta = {"kind": "lm", "config": _config_meta(lm.config)}
    if extra:
        meta["extra"] = extra
    ckpt.save_checkpoint(path, lm.params, meta)


def load_lm(path) -> tuple[RnnLm, dict]:
    meta, values = ckpt.load_checkpoint(path)
    if meta.get("kind") != "lm":
        raise ckpt.CheckpointError(f"{path}: not a language model checkpoint")
    lm = RnnLm(LmConfig(**meta["config"]))
    lm.params.load_values(values)
    return lm, meta
