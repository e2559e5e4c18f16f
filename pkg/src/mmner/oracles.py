"""Slow reference computations used to check the fast paths."""
from __future__ import annotations

import itertools
from fractions import Fraction

import mpmath
import numpy as np

from .seqdata import ENTITY_TYPES, extract_spans


def enumerate_paths(n: int, k: int) -> np.ndarray:
    """Every tag path of length n over k tags, lexicographic order, [k**n, n]."""
    return np.array(list(itertools.product(range(k), repeat=n)), dtype=np.int64).reshape(-1, n)


def brute_force_crf(emissions, transitions, start, stop):
    """(logZ, best path, best score) by scoring all k**n paths."""
    em = np.asarray(emissions)
    n, k = em.shape
    paths = enumerate_paths(n, k)
    scores = start[paths[:, 0]] + stop[paths[:, -1]] + em[np.arange(n), paths].sum(axis=1)
    if n > 1:
        scores = scores + transitions[paths[:, :-1], paths[:, 1:]].sum(axis=1)
    m = scores.max()
    logz = m + np.log(np.sum(np.exp(scores - m)))
    best = int(np.argmax(scores))  # first maximum = lexicographically lowest path
    return float(logz), paths[best].tolist(), float(scores[best])


def softmax_mp(x, dps: int = 50):
    """Softmax at extended precision; returns float64 values."""
    with mpmath.workdps(dps):
        vals = [mpmath.mpf(float(v)) for v in x]
        m = max(vals)
        e = [mpmath.exp(v - m) for v in vals]
        s = mpmath.fsum(e)
        return np.array([float(v / s) for v in e])


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def naive_conv1d(x, w, padding="same"):
    """x [L, cin], w [ks, cin, cout]; explicit sliding window."""
    L, cin = x.shape
    ks, _, cout = w.shape
    left = (ks - 1) // 2 if padding == "same" else 0
    right = ks - 1 - left if padding == "same" else 0
    xp = np.vstack([np.zeros((left, cin)), x, np.zeros((right, cin))])
    out_len = L + left + right - ks + 1
    out = np.zeros((out_len, cout))
    for t in range(out_len):
        for o in range(cout):
            acc = 0.0
            for k in range(ks):
                for c in range(cin):
                    acc += xp[t + k, c] * w[k, c, o]
            out[t, o] = acc
    return out


def naive_maxpool1d(x, pool):
    L, C = x.shape
    rows = []
    for s in range(0, L, pool):
        rows.append([max(x[s:s + pool, c]) for c in range(C)])
    return np.array(rows)


def brute_force_scores(gold, pred) -> dict:
    """type -> (tp, fp, fn) from explicit span sets."""
    counts = {t: [0, 0, 0] for t in ENTITY_TYPES}
    for g, p in zip(gold, pred):
        gs = {(s.start, s.end, s.type) for s in extract_spans(g)}
        ps = {(s.start, s.end, s.type) for s in extract_spans(p)}
        for s in gs & ps:
            counts[s[2]][0] += 1
        for s in ps - gs:
            counts[s[2]][1] += 1
        for s in gs - ps:
            counts[s[2]][2] += 1
    return {t: tuple(v) for t, v in counts.items()}


def full_sort_top_k(probs, k=5):
    """Indices of the k largest entries by sorting (value desc, index asc) pairs."""
    ranked = sorted(range(len(probs)), key=lambda i: (-Fraction(float(probs[i])), i))
    return ranked[:k]


def random_bio2(rng, n):
    """A random BIO2-legal tag sequence of length n."""
    tags, prev = [], "O"
    for _ in range(n):
        r = rng.random()
        if prev != "O" and r < 0.35:
            tag = "I-" + prev[2:]
        elif r < 0.65:
            tag = "O"
        else:
            tag = "B-" + ENTITY_TYPES[rng.integers(len(ENTITY_TYPES))]
        tags.append(tag)
        prev = tag
    return tags
