"""CTC loss, greedy decoding, and token error metrics.

The forward algorithm runs in log space over the blank-interleaved label
sequence. Impossible transitions carry a finite additive penalty
(LOG_ZERO) rather than -inf so verification-mode finiteness checks stay
enabled and gradients contain no NaNs.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import engine as E
from .engine import Tensor
from .model import Linear, Module

LOG_ZERO = -1e30


class CTCHead(Module):
    """Linear generator from hidden states to per-frame token logits.

    Output dim is vocab_size + 1; index 0 is the blank.
    """

    def __init__(self, rng, d_model: int, vocab_size: int):
        super().__init__()
        self.vocab_size = vocab_size
        self.children["out"] = Linear(rng, d_model, vocab_size + 1)

    def __call__(self, hidden: Tensor) -> Tensor:
        return self.children["out"](hidden)


def extended_labels(target, blank: int = 0) -> list:
    ext = [blank]
    for y in target:
        ext.append(int(y))
        ext.append(blank)
    return ext


def min_input_length(target) -> int:
    """Shortest frame count that can emit the target under CTC."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _gather_row(logp: Tensor, t: int, idx: np.ndarray) -> Tensor:
    """logp[t, idx] as a 1-D tensor of len(idx)."""
    row = E.slice_axis(logp, 0, t, t + 1)  # (1, V)
    col = E.transpose(row, (1, 0))  # (V, 1)
    return E.reshape(E.embedding(col, idx), (len(idx),))


def ctc_loss_single(logits: Tensor, target, blank: int = 0, normalize: bool = False) -> Tensor:
    """Negative log-likelihood of `target` for one utterance.

    logits: (T, V) on the tape. Infeasible targets (too few frames)
    return +inf off the tape and emit a warning. normalize divides by
    the target length.
    """
    target = [int(y) for y in target]
    T, V = logits.shape
    for y in target:
        if y == blank or not 0 <= y < V:
            raise ValueError("target tokens must be non-blank vocabulary indices")
    if len(target) == 0:
        raise ValueError("empty CTC target")
    if T < min_input_length(target):
        warnings.warn("CTC target infeasible for input length; returning +inf")
        return Tensor(np.asarray(np.inf, dtype=logits.dtype))

    logp = E.log_softmax(logits, axis=-1)
    ext = np.asarray(extended_labels(target, blank))
    S = len(ext)

    # additive masks for the three transition sources
    no_skip = np.full(S, LOG_ZERO)
    for s in range(2, S):
        if ext[s] != blank and ext[s] != ext[s - 2]:
            no_skip[s] = 0.0
    dtype = np.float64 if logits.dtype == np.float64 else np.float32
    lz1 = Tensor(np.full(1, LOG_ZERO, dtype=dtype))
    lz2 = Tensor(np.full(2, LOG_ZERO, dtype=dtype))
    skip_mask = Tensor(no_skip.astype(dtype))

    # alpha(0, s): emission at s=0 (blank) and s=1 (first label), else LOG_ZERO
    init = np.full(S, LOG_ZERO, dtype=dtype)
    init[0] = 0.0
    init[1] = 0.0
    alpha = E.add(_gather_row(logp, 0, ext), Tensor(init))

    for t in range(1, T):
        stay = alpha
        step1 = E.concat([lz1, E.slice_axis(alpha, 0, 0, S - 1)], axis=0)
        step2 = E.add(E.concat([lz2, E.slice_axis(alpha, 0, 0, S - 2)], axis=0), skip_mask)
        stacked = E.concat([
            E.reshape(stay, (1, S)), E.reshape(step1, (1, S)), E.reshape(step2, (1, S))
        ], axis=0)
        alpha = E.add(E.logsumexp(stacked, axis=0), _gather_row(logp, t, ext))

    tail = E.slice_axis(alpha, 0, S - 2, S) if S >= 2 else E.reshape(alpha, (1,))
    nll = E.mul(E.logsumexp(tail, axis=0, keepdims=True), Tensor(np.asarray(-1.0, dtype=dtype)))
    nll = E.reshape(nll, ())
    if normalize:
        nll = E.mul(nll, Tensor(np.asarray(1.0 / len(target), dtype=dtype)))
    return nll


def ctc_loss_batch(logits: Tensor, out_lengths, targets, blank: int = 0,
                   normalize: bool = True) -> Tensor:
    """Mean per-utterance CTC loss over the feasible part of a batch.

    logits: (B, T, V); out_lengths gives each utterance's valid frame
    count; targets is a list of token-id lists. Infeasible utterances
    are skipped (each with a warning); an all-infeasible batch raises.
    """
    B = logits.shape[0]
    losses = []
    for b in range(B):
        T_b = int(np.asarray(out_lengths)[b])
        sub = E.reshape(E.slice_axis(E.slice_axis(logits, 0, b, b + 1), 1, 0, T_b),
                        (T_b, logits.shape[2]))
        loss = ctc_loss_single(sub, targets[b], blank=blank, normalize=normalize)
        if np.isfinite(loss.data):
            losses.append(loss)
    if not losses:
        raise ValueError("no feasible CTC targets in batch")
    total = losses[0]
    for l in losses[1:]:
        total = E.add(total, l)
    return E.mul(total, Tensor(np.asarray(1.0 / len(losses), dtype=total.dtype)))


def greedy_decode(log_probs: np.ndarray, blank: int = 0) -> list:
    """Best path decoding: framewise argmax (ties -> lowest index),
    collapse repeats, drop blanks."""
    best = np.argmax(np.asarray(log_probs), axis=-1)
    out = []
    prev = None
    for b in best:
        b = int(b)
        if b != prev and b != blank:
            out.append(b)
        prev = b
    return out


def edit_distance(ref, hyp) -> int:
    """Levenshtein distance over token sequences."""
    ref, hyp = list(ref), list(hyp)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[len(hyp)]


def error_rate(refs, hyps) -> float:
    """Corpus-level token error rate: total edits / total reference tokens."""
    if len(refs) != len(hyps):
        raise ValueError("refs and hyps must pair up")
    edits = sum(edit_distance(r, h) for r, h in zip(refs, hyps))
    total = sum(len(list(r)) for r in refs)
    if total == 0:
        return 0.0 if edits == 0 else float("inf")
    return edits / total
