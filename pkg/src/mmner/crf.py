"""Linear-chain CRF over the BIO2 tag set: likelihood and Viterbi decoding.

Path score for tags y_1..y_n:
    start[y_1] + sum_k emit[k, y_k] + sum_k T[y_{k-1}, y_k] + stop[y_n]
The log-likelihood is score(y) - logZ with logZ from the forward algorithm.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Module, Tensor
from .autodiff.module import zeros
from .errors import ContractError
from .seqdata import TAGS

ILLEGAL_PENALTY = -1e4


class CrfParams(Module):
    """transitions[prev, next], start[tag], stop[tag]; zeros at init."""

    def __init__(self, n_tags: int = len(TAGS)):
        self.n_tags = n_tags
        self.transitions = zeros((n_tags, n_tags))
        self.start = zeros(n_tags)
        self.stop = zeros(n_tags)


def _as_batch(emissions, tags=None, mask=None):
    emissions = ad.as_tensor(emissions)
    single = emissions.ndim == 2
    if single:
        emissions = ad.reshape(emissions, (1,) + emissions.shape)
        if tags is not None:
            tags = np.asarray(tags, dtype=np.int64)[None]
        if mask is not None:
            mask = np.asarray(mask)[None]
    B, T, _ = emissions.shape
    mask = np.ones((B, T), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return emissions, tags, mask, single


def _check_mask(mask):
    if mask.shape[1] == 0 or not mask[:, 0].all():
        raise ContractError("every sequence needs at least one position and a leading real token")
    if np.any(mask[:, 1:] & ~mask[:, :-1]):
        raise ContractError("mask must be a contiguous prefix per sequence")


def log_partition(emissions, params: CrfParams, mask=None) -> Tensor:
    """logZ per sequence by the forward algorithm. emissions [n, K] or [B, T, K]."""
    em, _, mask, single = _as_batch(emissions, None, mask)
    _check_mask(mask)
    B, T, K = em.shape
    trans = ad.reshape(params.transitions, (1, K, K))
    alpha = params.start + em[:, 0, :]                  # [B, K]
    for t in range(1, T):
        scores = ad.reshape(alpha, (B, K, 1)) + trans + ad.reshape(em[:, t, :], (B, 1, K))
        nxt = ad.logsumexp(scores, axis=1)
        m = mask[:, t:t + 1]
        alpha = nxt if m.all() else ad.where(m, nxt, alpha)
    logz = ad.logsumexp(alpha + params.stop, axis=-1)
    return logz[0] if single else logz


def path_score(emissions, tags, params: CrfParams, mask=None) -> Tensor:
    em, tags, mask, single = _as_batch(emissions, tags, mask)
    _check_mask(mask)
    B, T, K = em.shape
    tags = np.asarray(tags, dtype=np.int64)
    if tags.shape != (B, T):
        raise ContractError(f"tags shape {tags.shape} does not match emissions {em.shape[:2]}")
    valid = tags[mask]
    if valid.size and (valid.min() < 0 or valid.max() >= K):
        raise ContractError(f"tag index out of range [0, {K})")
    safe = np.where(mask, tags, 0)
    fm = mask.astype(np.float64)
    bidx = np.arange(B)[:, None]
    emit = ad.tsum(em[bidx, np.arange(T)[None, :], safe] * fm, axis=1)
    score = emit + params.start[safe[:, 0]]
    if T > 1:
        tr = params.transitions[safe[:, :-1], safe[:, 1:]]          # [B, T-1]
        score = score + ad.tsum(tr * fm[:, 1:], axis=1)
    last = safe[np.arange(B), mask.sum(axis=1) - 1]
    score = score + params.stop[last]
    return score[0] if single else score


def crf_log_likelihood(emissions, tags, params: CrfParams, mask=None) -> Tensor:
    """score(tags) - logZ; scalar for [n, K] input, [B] for batched input."""
    return path_score(emissions, tags, params, mask) - log_partition(emissions, params, mask)


def bio2_constraints(n_tags: int = len(TAGS)):
    """Additive penalties (transitions [K, K], start [K]) for illegal BIO2 moves."""
    trans = np.where(TAGS.transition_mask(), 0.0, ILLEGAL_PENALTY)
    start = np.where(TAGS.start_mask(), 0.0, ILLEGAL_PENALTY)
    return trans[:n_tags, :n_tags], start[:n_tags]


def viterbi_decode(emissions, params: CrfParams, mask_illegal: bool = False):
    """Highest-scoring path for one sequence; returns (tag indices, score).

    Ties resolve toward the lowest tag index at every argmax.
    """
    em = np.asarray(emissions.data if isinstance(emissions, Tensor) else emissions, dtype=np.float64)
    n, K = em.shape
    if n < 1:
        raise ContractError("viterbi_decode needs at least one position")
    trans = params.transitions.data
    start = params.start.data
    if mask_illegal:
        pen_t, pen_s = bio2_constraints(K)
        trans = trans + pen_t
        start = start + pen_s
    score = start + em[0]
    back = np.zeros((n, K), dtype=np.int64)
    for t in range(1, n):
        cand = score[:, None] + trans            # [prev, next]
        back[t] = np.argmax(cand, axis=0)
        score = cand[back[t], np.arange(K)] + em[t]
    final = score + params.stop.data
    best = int(np.argmax(final))
    path = [best]
    for t in range(n - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    return path, float(final[best])
