"""Dense numerical core: parameterized layers with explicit forward/backward
passes, the AdaDelta optimizer, and gradient clipping.

Everything runs in float64 and every backward pass is written by hand so that
it can be checked against central finite differences. Forward functions return
``(output, cache)``; the matching ``*_backward`` consumes the cache, returns
gradients with respect to the inputs, and accumulates parameter gradients into
the ``Tensor.grad`` buffers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    pass


class GradientError(RuntimeError):
    pass


class Tensor:
    """A named parameter: float64 values plus an optional gradient buffer."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, value, name: str = ""):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def add_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if np.shape(g) != self.value.shape:
            raise ShapeError(
                f"gradient shape {np.shape(g)} != value shape {self.value.shape}"
                f" for parameter {self.name!r}"
            )
        self.grad += g

    def __repr__(self):
        return f"Tensor({self.name!r}, shape={self.value.shape})"


class ParamSet:
    """Ordered registry of named parameters.

    Iteration order is insertion order, which is what makes clipping,
    optimizer updates, and checkpoints reproducible.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(value, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return self._params.values()

    def zero_grads(self):
        for t in self._params.values():
            t.zero_grad()

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray], strict: bool = True):
        """Overwrite parameter values in place. Unknown names are rejected."""
        for name, arr in values.items():
            if name not in self._params:
                if strict:
                    raise KeyError(f"unknown parameter {name!r}")
                continue
            t = self._params[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != t.value.shape:
                raise ShapeError(
                    f"parameter {name!r}: checkpoint shape {arr.shape}"
                    f" != model shape {t.value.shape}"
                )
            t.value[...] = arr


# ---------------------------------------------------------------------------
# elementary layers
# ---------------------------------------------------------------------------

def linear(x: np.ndarray, w: Tensor, b: Tensor | None):
    """y = x @ w.T (+ b). x may be a vector or a (rows, in) matrix."""
    if x.shape[-1] != w.value.shape[1]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} != {w.value.shape[1]}")
    y = x @ w.value.T
    if b is not None:
        y = y + b.value
    return y, (x, w, b)


def linear_backward(dy: np.ndarray, cache):
    x, w, b = cache
    if x.ndim == 1:
        w.add_grad(np.outer(dy, x))
        if b is not None:
            b.add_grad(dy)
    else:
        w.add_grad(dy.T @ x)
        if b is not None:
            b.add_grad(dy.sum(axis=0))
    return dy @ w.value


def embed(idx: int, table: Tensor):
    if not 0 <= idx < table.value.shape[0]:
        raise ShapeError(f"embedding index {idx} out of range [0, {table.value.shape[0]})")
    return table.value[idx].copy(), (idx, table)


def embed_backward(dvec: np.ndarray, cache):
    idx, table = cache
    if table.grad is None:
        table.zero_grad()
    table.grad[idx] += dvec


def tanh(x: np.ndarray):
    y = np.tanh(x)
    return y, y


def tanh_backward(dy: np.ndarray, cache):
    y = cache
    return dy * (1.0 - y * y)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: np.ndarray):
    """Row-stable softmax; rows sum to 1 within 1e-12."""
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    return y, y


def softmax_backward(dy: np.ndarray, cache):
    y = cache
    dot = np.sum(dy * y, axis=-1, keepdims=True)
    return y * (dy - dot)


def log_softmax(x: np.ndarray):
    shifted = x - np.max(x, axis=-1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    y = shifted - logz
    return y, y


def log_softmax_backward(dy: np.ndarray, cache):
    y = cache
    return dy - np.exp(y) * np.sum(dy, axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, target: int):
    """Negative log-likelihood of ``target`` under softmax(logits)."""
    if not 0 <= target < logits.shape[-1]:
        raise ShapeError(f"cross_entropy: target {target} out of range")
    logp, _ = log_softmax(logits)
    return -logp[target], (logp, target)


def cross_entropy_backward(dloss: float, cache):
    logp, target = cache
    d = np.exp(logp)
    d[target] -= 1.0
    return dloss * d


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

@dataclass
class LstmParams:
    """Fused gate weights, gate order (input, forget, cell, output)."""

    wx: Tensor  # (4H, in)
    wh: Tensor  # (4H, H)
    b: Tensor   # (4H,)

    @property
    def hidden(self) -> int:
        return self.wh.value.shape[1]


def lstm_step(x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, p: LstmParams):
    h = p.hidden
    if x.shape[0] != p.wx.value.shape[1]:
        raise ShapeError(f"lstm_step: input dim {x.shape[0]} != {p.wx.value.shape[1]}")
    if h_prev.shape[0] != h or c_prev.shape[0] != h:
        raise ShapeError("lstm_step: state dim mismatch")
    gates = p.wx.value @ x + p.wh.value @ h_prev + p.b.value
    i = sigmoid(gates[:h])
    f = sigmoid(gates[h:2 * h])
    g = np.tanh(gates[2 * h:3 * h])
    o = sigmoid(gates[3 * h:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h_new = o * tc
    cache = (x, h_prev, c_prev, i, f, g, o, tc, p)
    return h_new, c, cache


def lstm_step_backward(dh: np.ndarray, dc: np.ndarray, cache):
    """Returns (dx, dh_prev, dc_prev); accumulates into the layer's tensors."""
    x, h_prev, c_prev, i, f, g, o, tc, p = cache
    h = i.shape[0]
    do = dh * tc
    dc_total = dc + dh * o * (1.0 - tc * tc)
    di = dc_total * g
    df = dc_total * c_prev
    dg = dc_total * i
    dc_prev = dc_total * f
    dgates = np.concatenate([
        di * i * (1.0 - i),
        df * f * (1.0 - f),
        dg * (1.0 - g * g),
        do * o * (1.0 - o),
    ])
    p.wx.add_grad(np.outer(dgates, x))
    p.wh.add_grad(np.outer(dgates, h_prev))
    p.b.add_grad(dgates)
    dx = p.wx.value.T @ dgates
    dh_prev = p.wh.value.T @ dgates
    return dx, dh_prev, dc_prev


def lstm_sequence(xs: np.ndarray, p: LstmParams, reverse: bool = False):
    """Run one LSTM direction over a (T, in) sequence from zero state."""
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ShapeError("lstm_sequence: need a non-empty (T, in) sequence")
    h = p.hidden
    order = range(xs.shape[0] - 1, -1, -1) if reverse else range(xs.shape[0])
    hs = np.zeros((xs.shape[0], h))
    ht = np.zeros(h)
    ct = np.zeros(h)
    caches = []
    for t in order:
        ht, ct, cache = lstm_step(xs[t], ht, ct, p)
        hs[t] = ht
        caches.append((t, cache))
    return hs, caches


def lstm_sequence_backward(dhs: np.ndarray, caches):
    t0, first = caches[0]
    dxs = np.zeros((dhs.shape[0], first[0].shape[0]))
    h = first[3].shape[0]
    dh_carry = np.zeros(h)
    dc_carry = np.zeros(h)
    for t, cache in reversed(caches):
        dx, dh_carry, dc_carry = lstm_step_backward(dhs[t] + dh_carry, dc_carry, cache)
        dxs[t] = dx
    return dxs


def blstm(xs: np.ndarray, fwd: LstmParams, bwd: LstmParams):
    """Bidirectional layer: output is [forward ; backward], (T, 2H)."""
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ShapeError("blstm: need a non-empty (T, in) sequence")
    hf, cf = lstm_sequence(xs, fwd, reverse=False)
    hb, cb = lstm_sequence(xs, bwd, reverse=True)
    return np.concatenate([hf, hb], axis=1), (cf, cb, fwd.hidden)


def blstm_backward(dout: np.ndarray, cache):
    cf, cb, h = cache
    dxs = lstm_sequence_backward(np.ascontiguousarray(dout[:, :h]), cf)
    dxs += lstm_sequence_backward(np.ascontiguousarray(dout[:, h:]), cb)
    return dxs


# ---------------------------------------------------------------------------
# location-based attention
# ---------------------------------------------------------------------------

@dataclass
class AttentionParams:
    query_w: Tensor    # (att, dec)
    enc_w: Tensor      # (att, enc)
    loc_w: Tensor      # (att, filters)
    loc_filters: Tensor  # (filters, width), width odd
    score_v: Tensor    # (att,)
    bias: Tensor       # (att,)


def _alignment_windows(alignment: np.ndarray, width: int) -> np.ndarray:
    """Sliding centered windows of the alignment, zero padded, (T, width)."""
    half = width // 2
    padded = np.concatenate([np.zeros(half), alignment, np.zeros(half)])
    return np.lib.stride_tricks.sliding_window_view(padded, width).copy()


def location_attention(dec_state: np.ndarray, enc_states: np.ndarray,
                       prev_alignment: np.ndarray, p: AttentionParams):
    """Alignment = softmax over per-frame scores of decoder state, encoder
    frame, and a 1-D convolution of the previous alignment; the context
    summary is the alignment-weighted sum of encoder frames.
    """
    tlen = enc_states.shape[0]
    if prev_alignment.shape[0] != tlen:
        raise ShapeError(
            f"location_attention: alignment length {prev_alignment.shape[0]}"
            f" != {tlen} encoder frames"
        )
    width = p.loc_filters.value.shape[1]
    windows = _alignment_windows(prev_alignment, width)       # (T, width)
    loc_feat = windows @ p.loc_filters.value.T                # (T, filters)
    pre = (enc_states @ p.enc_w.value.T
           + loc_feat @ p.loc_w.value.T
           + p.query_w.value @ dec_state
           + p.bias.value)                                    # (T, att)
    act = np.tanh(pre)
    scores = act @ p.score_v.value                            # (T,)
    alignment, sm_cache = softmax(scores)
    context = alignment @ enc_states
    cache = (dec_state, enc_states, windows, loc_feat, act, sm_cache, alignment, p)
    return context, alignment, cache


def location_attention_backward(dcontext: np.ndarray, dalignment: np.ndarray, cache):
    """Returns (d_dec_state, d_enc_states, d_prev_alignment)."""
    dec_state, enc_states, windows, loc_feat, act, sm_cache, alignment, p = cache
    tlen, width = windows.shape
    d_enc = np.outer(alignment, dcontext)
    dalign = dalignment + enc_states @ dcontext
    dscores = softmax_backward(dalign, sm_cache)
    p.score_v.add_grad(act.T @ dscores)
    dact = np.outer(dscores, p.score_v.value)
    dpre = dact * (1.0 - act * act)                           # (T, att)
    p.enc_w.add_grad(dpre.T @ enc_states)
    p.loc_w.add_grad(dpre.T @ loc_feat)
    p.query_w.add_grad(np.outer(dpre.sum(axis=0), dec_state))
    p.bias.add_grad(dpre.sum(axis=0))
    d_enc += dpre @ p.enc_w.value
    d_dec = p.query_w.value.T @ dpre.sum(axis=0)
    dloc_feat = dpre @ p.loc_w.value                          # (T, filters)
    p.loc_filters.add_grad(dloc_feat.T @ windows)
    dwindows = dloc_feat @ p.loc_filters.value                # (T, width)
    half = width // 2
    dpadded = np.zeros(tlen + 2 * half)
    for off in range(width):
        dpadded[off:off + tlen] += dwindows[:, off]
    d_prev_alignment = dpadded[half:half + tlen]
    return d_dec, d_enc, d_prev_alignment


# ---------------------------------------------------------------------------
# optimizer and clipping
# ---------------------------------------------------------------------------

class AdaDeltaState:
    """Per-parameter running averages of g^2 and delta^2."""

    def __init__(self, params: ParamSet, rho: float = 0.95, eps: float = 1e-8):
        if not 0.0 <= rho < 1.0:
            raise ValueError(f"rho must be in [0, 1), got {rho}")
        self.rho = rho
        self.eps = eps
        self.sq_grad = {name: np.zeros_like(t.value) for name, t in params.items()}
        self.sq_delta = {name: np.zeros_like(t.value) for name, t in params.items()}


def adadelta_update(params: ParamSet, state: AdaDeltaState):
    """One AdaDelta step over every parameter; gradients must be populated."""
    rho, eps = state.rho, state.eps
    for name, t in params.items():
        if t.grad is None:
            raise GradientError(f"parameter {name!r} has no gradient")
        if not np.all(np.isfinite(t.grad)):
            raise GradientError(f"non-finite gradient in parameter {name!r}")
        eg = state.sq_grad[name]
        ed = state.sq_delta[name]
        eg *= rho
        eg += (1.0 - rho) * t.grad * t.grad
        delta = -np.sqrt(ed + eps) / np.sqrt(eg + eps) * t.grad
        ed *= rho
        ed += (1.0 - rho) * delta * delta
        t.value += delta


def grad_norm(params: ParamSet) -> float:
    total = 0.0
    for name, t in params.items():
        if t.grad is None:
            raise GradientError(f"parameter {name!r} has no gradient")
        total += float(np.dot(t.grad.ravel(), t.grad.ravel()))
    return float(np.sqrt(total))


def clip_grad_norm(params: ParamSet, max_norm: float) -> float:
    """Scale all gradients by max_norm/||g|| when ||g|| exceeds max_norm.

    Returns the scaling factor that was applied (1.0 when no clipping).
    """
    norm = grad_norm(params)
    if not np.isfinite(norm):
        bad = [n for n, t in params.items() if not np.all(np.isfinite(t.grad))]
        raise GradientError(f"non-finite gradient in parameters {bad}")
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for t in params.tensors():
        t.grad *= scale
    return scale
