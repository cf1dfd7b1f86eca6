"""CTC negative log-likelihood via the forward-backward recursion, and
incremental prefix scoring for label-synchronous joint decoding.

All probability arithmetic stays in the log domain; ``LOG_ZERO`` stands in
for log(0) so that numpy's logaddexp treats impossible paths correctly
without emitting -inf arithmetic warnings.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

LOG_ZERO = -1e30


class InfeasibleTargetError(ValueError):
    """Target cannot be aligned to the given number of frames."""


class FinishedPrefixError(RuntimeError):
    """Attempted to extend a prefix state that was already end-marked."""


def _logaddexp(a, b):
    return np.logaddexp(a, b)


def min_frames_for(target) -> int:
    """Shortest admissible input: one frame per label plus a separating
    blank between adjacent repeats."""
    repeats = sum(1 for i in range(1, len(target)) if target[i] == target[i - 1])
    return len(target) + repeats


@dataclass
class CtcLossResult:
    nll: float
    grad_logits: np.ndarray  # (frames, vocab), gradient wrt pre-softmax logits


def ctc_loss(log_probs: np.ndarray, target, blank: int = 0) -> CtcLossResult:
    """Forward-backward CTC loss over the blank-augmented target.

    ``log_probs`` must be per-frame log-softmax outputs of shape
    (frames, vocab). The returned gradient is with respect to the logits
    that produced them (softmax minus label occupancy).
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    tlen, vocab = log_probs.shape
    target = list(target)
    if any(not 0 <= u < vocab for u in target):
        raise ValueError("target contains out-of-range unit ids")
    if blank in target:
        raise ValueError("target must not contain the blank id")
    if tlen < min_frames_for(target):
        raise InfeasibleTargetError(
            f"target of length {len(target)} needs at least"
            f" {min_frames_for(target)} frames, got {tlen}"
        )

    # blank-augmented label sequence: blank, y1, blank, y2, ..., blank
    ext = [blank]
    for u in target:
        ext.extend((u, blank))
    slen = len(ext)
    ext_arr = np.asarray(ext)
    emit = log_probs[:, ext_arr]  # (T, S)

    # skip transition s-2 -> s allowed when label s is not blank and differs
    # from label s-2
    can_skip = np.zeros(slen, dtype=bool)
    for s in range(2, slen):
        can_skip[s] = ext[s] != blank and ext[s] != ext[s - 2]

    alpha = np.full((tlen, slen), LOG_ZERO)
    alpha[0, 0] = emit[0, 0]
    if slen > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, tlen):
        stay = alpha[t - 1]
        prev = np.full(slen, LOG_ZERO)
        prev[1:] = alpha[t - 1, :-1]
        skip = np.full(slen, LOG_ZERO)
        skip[2:] = np.where(can_skip[2:], alpha[t - 1, :-2], LOG_ZERO)
        alpha[t] = _logaddexp(_logaddexp(stay, prev), skip) + emit[t]

    log_lik = _logaddexp(alpha[-1, -1], alpha[-1, -2] if slen > 1 else LOG_ZERO)

    beta = np.full((tlen, slen), LOG_ZERO)
    beta[-1, -1] = 0.0
    if slen > 1:
        beta[-1, -2] = 0.0
    for t in range(tlen - 2, -1, -1):
        stay = beta[t + 1] + emit[t + 1]
        nxt = np.full(slen, LOG_ZERO)
        nxt[:-1] = beta[t + 1, 1:] + emit[t + 1, 1:]
        skip = np.full(slen, LOG_ZERO)
        skip[:-2] = np.where(can_skip[2:], beta[t + 1, 2:] + emit[t + 1, 2:], LOG_ZERO)
        beta[t] = _logaddexp(_logaddexp(stay, nxt), skip)

    # occupancy gamma[t, v] = sum over augmented states with label v
    occ = alpha + beta - log_lik  # (T, S) in log domain
    gamma = np.zeros_like(log_probs)
    for s in range(slen):
        gamma[:, ext[s]] += np.exp(occ[:, s])
    grad = np.exp(log_probs) - gamma
    return CtcLossResult(nll=float(-log_lik), grad_logits=grad)


# ---------------------------------------------------------------------------
# prefix scoring
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CtcPrefixState:
    """Forward probabilities of one label prefix over all frames.

    ``r_nonblank[t]`` / ``r_blank[t]`` hold the log-probability that the
    frames up to t produce exactly the prefix, with the last emission being
    the prefix's final label / a blank. ``log_prefix`` is the accumulated
    probability that the full output *begins with* the prefix.
    """

    log_probs: np.ndarray = field(repr=False)
    blank: int
    prefix: tuple[int, ...]
    r_nonblank: np.ndarray = field(repr=False)
    r_blank: np.ndarray = field(repr=False)
    log_prefix: float
    finished: bool = False


def ctc_prefix_init(log_probs: np.ndarray, blank: int = 0) -> CtcPrefixState:
    """State for the empty prefix; every output begins with it (log 0.0)."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    r_blank = np.cumsum(log_probs[:, blank])
    r_nonblank = np.full(log_probs.shape[0], LOG_ZERO)
    return CtcPrefixState(
        log_probs=log_probs,
        blank=blank,
        prefix=(),
        r_nonblank=r_nonblank,
        r_blank=r_blank,
        log_prefix=0.0,
    )


def ctc_prefix_extend_batch(state: CtcPrefixState, units: np.ndarray):
    """Score all single-unit extensions of the prefix at once.

    Returns ``(log_prefix_new, r_nonblank_new, r_blank_new)`` where the
    first is shaped (n,) and the r arrays (n, T). Used by beam search;
    :func:`ctc_prefix_extend` is the single-unit wrapper.
    """
    if state.finished:
        raise FinishedPrefixError("cannot extend a finalized prefix state")
    units = np.asarray(units, dtype=np.int64)
    if np.any(units == state.blank):
        raise ValueError("cannot extend a prefix with the blank unit")
    x = state.log_probs
    tlen = x.shape[0]
    n = units.shape[0]
    xs = x[:, units]  # (T, n)

    # phi[t]: prefix ends at frame t and the new unit may start at t+1.
    # repeating the last label must go through a blank, so the
    # nonblank-ending mass is excluded for that unit.
    r_sum = _logaddexp(state.r_nonblank, state.r_blank)  # (T,)
    phi = np.broadcast_to(r_sum[:, None], (tlen, n)).copy()
    if state.prefix:
        same = units == state.prefix[-1]
        if np.any(same):
            phi[:, same] = state.r_blank[:, None]

    out_len = len(state.prefix) + 1
    r_nb = np.full((tlen, n), LOG_ZERO)
    r_b = np.full((tlen, n), LOG_ZERO)
    if out_len == 1:
        r_nb[0] = xs[0]
        log_psi = xs[0].copy()
    else:
        # a prefix of length L cannot be complete before frame L-1
        log_psi = np.full(n, LOG_ZERO)
    start = max(out_len - 1, 1)
    for t in range(start, tlen):
        r_nb[t] = _logaddexp(r_nb[t - 1], phi[t - 1]) + xs[t]
        r_b[t] = _logaddexp(r_b[t - 1], r_nb[t - 1]) + x[t, state.blank]
        log_psi = _logaddexp(log_psi, phi[t - 1] + xs[t])
    return log_psi, r_nb.T, r_b.T


def ctc_prefix_extend(state: CtcPrefixState, unit: int):
    """Extend the prefix by one non-blank unit.

    Returns ``(new_state, increment)`` with
    increment = log p(prefix + unit) - log p(prefix).
    """
    log_psi, r_nb, r_b = ctc_prefix_extend_batch(state, np.asarray([unit]))
    new_state = replace(
        state,
        prefix=state.prefix + (int(unit),),
        r_nonblank=r_nb[0],
        r_blank=r_b[0],
        log_prefix=float(log_psi[0]),
    )
    return new_state, float(log_psi[0] - state.log_prefix)


def ctc_prefix_select(state: CtcPrefixState, unit: int, log_psi: float,
                      r_nonblank: np.ndarray, r_blank: np.ndarray) -> CtcPrefixState:
    """Build the state for one candidate scored by the batch extension."""
    if state.finished:
        raise FinishedPrefixError("cannot extend a finalized prefix state")
    return replace(
        state,
        prefix=state.prefix + (int(unit),),
        r_nonblank=r_nonblank,
        r_blank=r_blank,
        log_prefix=float(log_psi),
    )


def ctc_prefix_finish(state: CtcPrefixState):
    """End-mark the prefix: score it as the complete output sequence.

    Returns ``(final_state, increment)`` where increment is
    log p(output == prefix) - log p(output begins with prefix).
    """
    if state.finished:
        raise FinishedPrefixError("prefix state already finalized")
    log_exact = float(_logaddexp(state.r_nonblank[-1], state.r_blank[-1]))
    final = replace(state, log_prefix=log_exact, finished=True)
    return final, log_exact - state.log_prefix
