"""Oracle checks behind ``mmner verify``.

Each gradient case builds a small random instance from a seed and returns
``(loss_fn, tensors)``; ``loss_fn`` recomputes a scalar from ``tensors``.
"""
from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, check_gradients
from .autodiff import tensor as _tensor_mod
from .crf import CrfParams, crf_log_likelihood, log_partition, viterbi_decode
from .cwi import CwiConfig, CwiModel, ImageVocab, WordLookup
from .layers import (AttentionParams, LstmParams, bilstm, group_norm, lstm_step,
                     modality_attention, sine_relu, targeted_dropout)
from .metrics import evaluate
from .msb import MsbConfig, MsbModel, SubwordVocab, scaled_dot_product_attention
from .msb.tokenizer import SPECIALS
from .oracles import brute_force_crf, brute_force_scores, full_sort_top_k, random_bio2, softmax_mp
from .seqdata import TAGS, EmbeddingTable, Example, select_top_k

GRAD_TOL = 1e-4


def _weighted_sum(out: Tensor, rng) -> Tensor:
    # random weights avoid cancellations that a plain sum can hide
    return ad.tsum(out * rng.normal(size=out.shape))


def case_conv1d(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(2, 6, 3)), True)
    k = Tensor(rng.normal(size=(3, 3, 4)), True)
    b = Tensor(rng.normal(size=4), True)
    w = rng.normal(size=(2, 6, 4))
    return lambda: ad.tsum(ad.conv1d(x, k, b) * w), [x, k, b]


def case_maxpool1d(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(2, 7, 3)), True)
    w = rng.normal(size=(2, 4, 3))
    return lambda: ad.tsum(ad.maxpool1d(x, 2) * w), [x]


def case_lstm_step(seed):
    rng = np.random.default_rng(seed)
    p = LstmParams(rng, 3, 4)
    x = Tensor(rng.normal(size=(2, 3)), True)
    h = Tensor(rng.normal(size=(2, 4)), True)
    c = Tensor(rng.normal(size=(2, 4)), True)
    w1, w2 = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))

    def fn():
        h1, c1 = lstm_step(x, h, c, p)
        return ad.tsum(h1 * w1) + ad.tsum(c1 * w2)

    return fn, [x, h, c, p.W, p.U, p.b]


def case_bilstm(seed):
    rng = np.random.default_rng(seed)
    fwd, bwd = LstmParams(rng, 3, 4), LstmParams(rng, 3, 4)
    xs = Tensor(rng.normal(size=(2, 5, 3)), True)
    mask = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]], dtype=bool)
    w = rng.normal(size=(2, 5, 8)) * np.repeat(mask[..., None], 8, axis=-1)
    return (lambda: ad.tsum(bilstm(xs, fwd, bwd, mask) * w),
            [xs, fwd.W, fwd.U, fwd.b, bwd.W, bwd.U, bwd.b])


def case_sine_relu(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(12,)) * 2.0, True)
    w = rng.normal(size=12)
    return lambda: ad.tsum(sine_relu(x, 0.0025) * w), [x]


def case_targeted_dropout(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(3, 10)), True)
    w = rng.normal(size=(3, 10))
    fn = lambda: ad.tsum(targeted_dropout(x, 0.5, 0.4, True, np.random.default_rng(seed)) * w)
    return fn, [x]


def case_group_norm(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(2, 5, 8)), True)
    g = Tensor(rng.normal(size=8), True)
    b = Tensor(rng.normal(size=8), True)
    w = rng.normal(size=(2, 5, 8))
    return lambda: ad.tsum(group_norm(x, 4, g, b) * w), [x, g, b]


def case_modality_attention(seed):
    rng = np.random.default_rng(seed)
    p = AttentionParams(rng, 5)
    hs = [Tensor(rng.normal(size=(4, 5)), True) for _ in range(3)]
    w = rng.normal(size=(4, 5))
    return lambda: ad.tsum(modality_attention(hs, p)[0] * w), hs + [p.W, p.b]


def case_sdp_attention(seed):
    rng = np.random.default_rng(seed)
    q = Tensor(rng.normal(size=(2, 3, 4)), True)
    k = Tensor(rng.normal(size=(2, 5, 4)), True)
    v = Tensor(rng.normal(size=(2, 5, 4)), True)
    mask = np.array([[1, 1, 1, 1, 0], [1, 1, 0, 0, 0]])[:, None, :]
    w = rng.normal(size=(2, 3, 4))
    return lambda: ad.tsum(scaled_dot_product_attention(q, k, v, mask)[0] * w), [q, k, v]


def case_crf(seed):
    rng = np.random.default_rng(seed)
    p = CrfParams()
    for t in (p.transitions, p.start, p.stop):
        t.data[...] = rng.normal(size=t.shape)
    em = Tensor(rng.normal(size=(2, 5, 9)), True)
    tags = rng.integers(0, 9, size=(2, 5))
    mask = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]], dtype=bool)
    return (lambda: ad.tsum(crf_log_likelihood(em, tags, p, mask)),
            [em, p.transitions, p.start, p.stop])


def mini_cwi_config(attention=False, seed=0) -> CwiConfig:
    """All dimensions scaled down: 3 words of at most 5 characters."""
    return CwiConfig(max_words=3, max_chars=5, char_emb=3, glove_dim=3, fasttext_dim=2,
                     image_emb=3, image_lstm=3, word_lstm=2, fusion_lstm=2,
                     conv_specs=[[2, 2], [3, 2], [2, 2], [2, 2], [2, 2], [2, 2]], groups=2,
                     use_attention=attention, attention_dim=3, image_classes=4, seed=seed)


# every word fills all five character slots: repeated PAD windows would tie in
# max-pooling and put the check on a kink
MINI_EXAMPLES = [
    Example("m1", ["abcde", "Cfghi", "jklmn"], ["B-PER", "I-PER", "O"], [("cat", 0.6), ("dog", 0.3)]),
    Example("m2", ["opqrs", "tuvwx"], ["O", "B-LOC"], []),
]


def _model_case(model, rng, n_tensors=8, n_entries=3):
    params = model.parameters()
    pick = rng.choice(len(params), size=min(n_tensors, len(params)), replace=False)
    chosen = [params[i] for i in pick]
    fn = lambda: model.loss(MINI_EXAMPLES, training=False)
    return fn, chosen, n_entries


KINK_MARGIN = 1e-3


def _kink_margin(model) -> float:
    """Distance of one forward pass from the character branch's non-smooth points:
    SineRelu inputs near 0 (a jump) and max-pool windows with a near-tie (a kink)."""
    from . import cwi as cwi_mod

    gaps = []
    pool, relu = ad.maxpool1d, cwi_mod.sine_relu
    real = model.encode(MINI_EXAMPLES).mask.reshape(-1)   # padded word slots are masked out

    def spy_pool(x, size):
        L = x.shape[-2]
        for s in range(0, L, size):
            win = np.sort(x.data[real, s:s + size, :], axis=-2)
            if win.shape[-2] > 1:
                gaps.append(np.min(win[..., -1, :] - win[..., -2, :]))
        return pool(x, size)

    def spy_relu(x, epsilon):
        gaps.append(np.min(np.abs(x.data[real])))
        return relu(x, epsilon)

    ad.maxpool1d, cwi_mod.sine_relu = spy_pool, spy_relu
    try:
        with ad.no_grad():
            model.loss(MINI_EXAMPLES, training=False)
    finally:
        ad.maxpool1d, cwi_mod.sine_relu = pool, relu
    return float(min(gaps))


def case_mini_cwi(seed, attention=False):
    # finite differences across a jump or kink measure nothing useful, so redraw
    # the initialization until the check point is clear of both
    rng = np.random.default_rng(seed)
    words = WordLookup(EmbeddingTable(3, seed=seed), EmbeddingTable(2, seed=seed))
    for attempt in range(200):
        cfg = mini_cwi_config(attention, seed + 1000 * attempt)
        model = CwiModel(cfg, words, ImageVocab(["cat", "dog"], 4))
        if _kink_margin(model) > KINK_MARGIN:
            break
    else:
        raise RuntimeError(f"no smooth initialization found for seed {seed}")
    for p in model.crf.parameters():
        p.data[...] = rng.normal(size=p.shape)
    return _model_case(model, rng)


def mini_vocab() -> SubwordVocab:
    return SubwordVocab(list(SPECIALS) + ["ab", "c", "d", "x", "y", "##z", "cat", "dog"])


def case_mini_msb(seed, use_crf=True):
    rng = np.random.default_rng(seed)
    vocab = mini_vocab()
    cfg = MsbConfig(hidden=16, heads=2, layers=2, vocab_size=len(vocab), max_positions=16,
                    use_crf=use_crf, init_std=0.6, seed=seed)
    model = MsbModel(cfg, vocab)
    if use_crf:
        for p in model.crf.parameters():
            p.data[...] = rng.normal(size=p.shape)
    return _model_case(model, rng)


GRADIENT_CASES = {
    "conv1d": case_conv1d,
    "maxpool1d": case_maxpool1d,
    "lstm_step": case_lstm_step,
    "bilstm": case_bilstm,
    "sine_relu": case_sine_relu,
    "targeted_dropout": case_targeted_dropout,
    "group_norm": case_group_norm,
    "modality_attention": case_modality_attention,
    "scaled_dot_product_attention": case_sdp_attention,
    "crf_log_likelihood": case_crf,
    "cwi_miniature": lambda s: case_mini_cwi(s, False),
    "cwi_attn_miniature": lambda s: case_mini_cwi(s, True),
    "msb_miniature": lambda s: case_mini_msb(s, False),
    "msb_crf_miniature": lambda s: case_mini_msb(s, True),
}


def gradient_error(name: str, seed: int) -> float:
    built = GRADIENT_CASES[name](seed)
    fn, tensors = built[0], built[1]
    entries = built[2] if len(built) > 2 else None
    return check_gradients(fn, tensors, np.random.default_rng(seed), max_entries=entries)


# -- non-gradient oracles -------------------------------------------------
def crf_exactness(instances: int = 200, max_len: int = 6, seed: int = 0):
    """Worst |logZ - brute| and number of Viterbi path mismatches."""
    rng = np.random.default_rng(seed)
    worst, mismatches = 0.0, 0
    for i in range(instances):
        n = 1 + i % max_len
        p = CrfParams()
        for t in (p.transitions, p.start, p.stop):
            t.data[...] = rng.normal(size=t.shape)
        em = rng.normal(size=(n, 9)) * 2.0
        logz_bf, path_bf, _ = brute_force_crf(em, p.transitions.data, p.start.data, p.stop.data)
        worst = max(worst, abs(log_partition(Tensor(em), p).item() - logz_bf))
        if viterbi_decode(em, p)[0] != path_bf:
            mismatches += 1
    return worst, mismatches


def metric_oracle(corpora: int = 500, seed: int = 0) -> int:
    """Number of corpora where evaluate() disagrees with explicit span sets."""
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(corpora):
        n_sent = int(rng.integers(1, 8))
        gold, pred = [], []
        for _ in range(n_sent):
            n = int(rng.integers(1, 13))
            gold.append(random_bio2(rng, n))
            pred.append(random_bio2(rng, n) if rng.random() < 0.5 else _perturb(gold[-1], rng))
        rep = evaluate(gold, pred)
        bf = brute_force_scores(gold, pred)
        got = {t: (c.tp, c.fp, c.fn) for t, c in rep.per_type.items()}
        if got != bf:
            bad += 1
    return bad


def _perturb(tags, rng):
    """Copy of ``tags`` with a few positions resampled, kept BIO2-legal."""
    from .seqdata import repair_bio2

    out = list(tags)
    for _ in range(int(rng.integers(0, 3))):
        i = int(rng.integers(len(out)))
        out[i] = TAGS.labels[int(rng.integers(len(TAGS)))]
    return repair_bio2(out)


def top5_oracle(trials: int = 1000, seed: int = 0) -> int:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(trials):
        probs = rng.dirichlet(np.ones(1000))
        if set(select_top_k(probs)) != set(full_sort_top_k(probs)):
            bad += 1
    return bad


def attention_normalization(trials: int = 100, seed: int = 0) -> float:
    """Worst deviation of attention row sums from 1 (modality + encoder)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        d = int(rng.integers(2, 8))
        p = AttentionParams(rng, d)
        hs = [Tensor(rng.normal(size=(3, d)) * 3) for _ in range(int(rng.integers(1, 4)))]
        _, alpha = modality_attention(hs, p)
        worst = max(worst, float(np.max(np.abs(alpha.data.sum(-1) - 1))))
        T = int(rng.integers(2, 9))
        mask = (rng.random((1, T)) < 0.7).astype(int)
        mask[0, 0] = 1
        q, k = rng.normal(size=(T, 4)) * 3, rng.normal(size=(T, 4)) * 3
        _, w = scaled_dot_product_attention(q, k, rng.normal(size=(T, 4)), mask)
        worst = max(worst, float(np.max(np.abs(w.data.sum(-1) - 1))))
        # unmasked rows against an extended-precision softmax
        keep = mask[0] == 1
        for r, row in enumerate((q @ k.T) / 2.0):
            ref = softmax_mp(row[keep])
            worst = max(worst, float(np.max(np.abs(w.data[r, keep] - ref))))
        worst = max(worst, float(np.max(w.data[:, ~keep], initial=0.0)))
    return worst


def tokenizer_roundtrip(vocab: SubwordVocab) -> list:
    """In-vocabulary words that do not survive tokenize -> detokenize."""
    from .msb import detokenize, tokenize

    failures = []
    for tok in vocab.tokens:
        if tok in SPECIALS or tok.startswith("##"):
            continue
        pieces = tokenize(tok, vocab).pieces
        if "[UNK]" in pieces or detokenize(pieces) != tok:
            failures.append(tok)
    return failures


# -- runner ---------------------------------------------------------------
@contextlib.contextmanager
def corrupted_gradients(scale: float = 1.01):
    """Test hook: scale every sigmoid gradient so checks must fail."""
    original = _tensor_mod.sigmoid

    def bad_sigmoid(a):
        out = original(a)
        if out._backward is not None:
            inner = out._backward
            out._backward = lambda g: tuple(x * scale for x in inner(g))
        return out

    ad.sigmoid = _tensor_mod.sigmoid = bad_sigmoid
    try:
        yield
    finally:
        ad.sigmoid = _tensor_mod.sigmoid = original


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def run_checks(seeds: int = 5, vocab: SubwordVocab | None = None, corrupt: bool = False,
               echo=None) -> list:
    results = []

    def record(name, passed, detail):
        r = CheckResult(name, bool(passed), detail)
        results.append(r)
        if echo:
            echo(f"{'PASS' if r.passed else 'FAIL'}  {name:34s} {detail}")

    ctx = corrupted_gradients() if corrupt else contextlib.nullcontext()
    with ctx:
        for name in GRADIENT_CASES:
            t0 = time.perf_counter()
            worst = max(gradient_error(name, s) for s in range(seeds))
            record(f"grad:{name}", worst < GRAD_TOL,
                   f"max rel err {worst:.2e} over {seeds} seeds ({time.perf_counter() - t0:.1f}s)")
    logz_err, mism = crf_exactness()
    record("crf:brute-force", logz_err < 1e-8 and mism == 0,
           f"|dlogZ| {logz_err:.1e}, path mismatches {mism}")
    bad = metric_oracle()
    record("metrics:brute-force", bad == 0, f"{bad} disagreeing corpora of 500")
    bad = top5_oracle()
    record("image:top5", bad == 0, f"{bad} disagreeing trials of 1000")
    dev = attention_normalization()
    record("attention:normalization", dev < 1e-6, f"max deviation {dev:.1e}")
    if vocab is not None:
        fails = tokenizer_roundtrip(vocab)
        record("tokenizer:round-trip", not fails, f"{len(fails)} failures over {len(vocab)} entries")
    return results
