"""Custom layers: SineRelu, targeted dropout, group norm, LSTMs, modality attention."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Module, Parameter, Tensor
from .autodiff.module import glorot, ones, uniform, zeros
from .autodiff.tensor import _node, as_tensor
from .errors import ContractError, ShapeError


def sine_relu(x, epsilon: float = 0.0025) -> Tensor:
    """x for x > 0, epsilon * (sin x - cos x) for x <= 0.

    Not continuous at 0 for epsilon != 0: the left limit is -epsilon.
    """
    if epsilon <= 0:
        raise ContractError("epsilon must be positive")
    x = as_tensor(x)
    pos = x.data > 0
    s, c = np.sin(x.data), np.cos(x.data)
    out = np.where(pos, x.data, epsilon * (s - c))
    dneg = epsilon * (c + s)

    def bw(g):
        return (g * np.where(pos, 1.0, dneg),)

    return _node(out, (x,), bw, "sine_relu")


def targeted_dropout(x, drop_rate: float, target_rate: float, training: bool,
                     rng: np.random.Generator | None = None, unit_dims: int = 1,
                     target: str = "low") -> Tensor:
    """Drop units out of a magnitude-selected target set.

    Units are ranked per example over the trailing ``unit_dims`` axes. The
    ``target_rate`` fraction with the smallest magnitude (``target="high"``:
    largest) forms the target set; each target unit is zeroed with
    probability ``drop_rate``. Survivors are not rescaled.
    """
    if not (0.0 <= drop_rate <= 1.0 and 0.0 <= target_rate <= 1.0):
        raise ContractError("drop_rate and target_rate must lie in [0, 1]")
    x = as_tensor(x)
    if not training or drop_rate == 0.0 or target_rate == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode targeted dropout needs an rng")
    lead = x.shape[:x.ndim - unit_dims]
    n_units = int(np.prod(x.shape[x.ndim - unit_dims:]))
    flat = np.abs(x.data).reshape(-1, n_units)
    k = int(target_rate * n_units)
    mask = np.ones_like(flat)
    if k > 0:
        key = flat if target == "low" else -flat
        order = np.argsort(key, axis=1, kind="stable")[:, :k]
        drop = rng.random(order.shape) < drop_rate
        rows = np.repeat(np.arange(flat.shape[0])[:, None], k, axis=1)
        mask[rows[drop], order[drop]] = 0.0
    mask = mask.reshape(lead + x.shape[x.ndim - unit_dims:])
    return ad.mul(x, mask)


def group_norm(x, groups: int, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize channel groups of x [..., length, C] over (length, C / groups)."""
    x = as_tensor(x)
    C = x.shape[-1]
    if groups < 1 or C % groups:
        raise ShapeError(f"{C} channels are not divisible into {groups} groups")
    shape = x.shape
    xg = ad.reshape(x, shape[:-1] + (groups, C // groups))
    mu = ad.mean(xg, axis=(-3, -1), keepdims=True)
    centered = xg - mu
    var = ad.mean(centered * centered, axis=(-3, -1), keepdims=True)
    normed = centered / ad.sqrt(var + eps)
    return ad.reshape(normed, shape) * gamma + beta


def layer_norm(x, gamma, beta, eps: float = 1e-12) -> Tensor:
    mu = ad.mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = ad.mean(centered * centered, axis=-1, keepdims=True)
    return centered / ad.sqrt(var + eps) * gamma + beta


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int, eps: float = 1e-5):
        if channels % groups:
            raise ShapeError(f"{channels} channels are not divisible into {groups} groups")
        self.groups, self.eps = groups, eps
        self.gamma = ones(channels)
        self.beta = zeros(channels)

    def __call__(self, x):
        return group_norm(x, self.groups, self.gamma, self.beta, self.eps)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-12):
        self.eps = eps
        self.gamma = ones(dim)
        self.beta = zeros(dim)

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta, self.eps)


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True, init: str = "glorot"):
        if init == "glorot":
            self.W = glorot(rng, (d_in, d_out))
        else:
            self.W = Parameter(rng.normal(0.0, 0.02, size=(d_in, d_out)))
        self.b = zeros(d_out) if bias else None

    def __call__(self, x):
        y = ad.matmul(x, self.W) if x.ndim >= 2 else ad.matmul(ad.reshape(x, (1, -1)), self.W)[0]
        return y + self.b if self.b is not None else y


class Embedding(Module):
    def __init__(self, rng, n: int, dim: int, bound: float = 0.25):
        self.weight = uniform(rng, (n, dim), bound)

    def __call__(self, ids):
        return ad.embedding(self.weight, ids)


class Conv1d(Module):
    def __init__(self, rng, ks: int, c_in: int, c_out: int, padding: str = "same"):
        self.padding = padding
        self.kernels = glorot(rng, (ks, c_in, c_out))
        self.bias = zeros(c_out)

    def __call__(self, x):
        return ad.conv1d(x, self.kernels, self.bias, self.padding)


# -- LSTM -----------------------------------------------------------------
GATES = ("f", "i", "o", "c")


class LstmParams(Module):
    """Input weights W [d_in, 4H], recurrent U [H, 4H], bias b [4H].

    Gate blocks along the last axis are ordered forget, input, output, cell;
    ``gate("f")`` returns the (W_f, U_f, b_f) slices.
    """

    def __init__(self, rng, d_in: int, hidden: int, forget_bias: float = 1.0):
        self.d_in, self.hidden = d_in, hidden
        self.W = glorot(rng, (d_in, 4 * hidden))
        self.U = glorot(rng, (hidden, 4 * hidden))
        b = np.zeros(4 * hidden)
        b[:hidden] = forget_bias
        self.b = Parameter(b)

    def gate(self, name: str):
        k = GATES.index(name)
        sl = slice(k * self.hidden, (k + 1) * self.hidden)
        return self.W.data[:, sl], self.U.data[:, sl], self.b.data[sl]


def _lstm_cell(gates_pre, c_prev, H):
    f = ad.sigmoid(gates_pre[..., 0:H])
    i = ad.sigmoid(gates_pre[..., H:2 * H])
    o = ad.sigmoid(gates_pre[..., 2 * H:3 * H])
    cand = ad.tanh(gates_pre[..., 3 * H:4 * H])
    c = f * c_prev + i * cand
    h = o * ad.tanh(c)
    return h, c


def lstm_step(x_t, h_prev, c_prev, params: LstmParams):
    """One LSTM step on x_t [..., d_in]; returns (h_t, c_t)."""
    x_t, h_prev, c_prev = as_tensor(x_t), as_tensor(h_prev), as_tensor(c_prev)
    if x_t.shape[-1] != params.d_in or h_prev.shape[-1] != params.hidden:
        raise ShapeError(f"lstm_step: input {x_t.shape} / state {h_prev.shape} do not match "
                         f"d_in={params.d_in}, hidden={params.hidden}")
    lead = x_t.shape[:-1]
    x2 = ad.reshape(x_t, (-1, params.d_in))
    h2 = ad.reshape(h_prev, (-1, params.hidden))
    pre = ad.matmul(x2, params.W) + ad.matmul(h2, params.U) + params.b
    h, c = _lstm_cell(pre, ad.reshape(c_prev, (-1, params.hidden)), params.hidden)
    return ad.reshape(h, lead + (params.hidden,)), ad.reshape(c, lead + (params.hidden,))


def run_lstm(xs, params: LstmParams, mask=None, reverse: bool = False):
    """Run over xs [B, T, d_in]. Returns (outputs [B, T, H], last hidden [B, H]).

    Where ``mask`` [B, T] is 0 the state is carried through unchanged, so
    trailing padding never reaches a reverse pass and a forward pass ends on
    the last real token.
    """
    xs = as_tensor(xs)
    B, T, _ = xs.shape
    if T == 0:
        raise ContractError("LSTM over an empty sequence")
    H = params.hidden
    pre_x = ad.matmul(xs, params.W) + params.b  # [B, T, 4H]
    h = Tensor(np.zeros((B, H)))
    c = Tensor(np.zeros((B, H)))
    outs = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        pre = pre_x[:, t, :] + ad.matmul(h, params.U)
        h_new, c_new = _lstm_cell(pre, c, H)
        if mask is not None:
            m = mask[:, t:t + 1].astype(np.float64)
            if not m.all():
                h_new = ad.where(m > 0, h_new, h)
                c_new = ad.where(m > 0, c_new, c)
        h, c = h_new, c_new
        outs[t] = h
    return ad.stack(outs, axis=1), h


def bilstm(xs, fwd: LstmParams, bwd: LstmParams, mask=None) -> Tensor:
    """Per-position [h_fwd ; h_bwd] over xs [T, d] or [B, T, d]."""
    xs = as_tensor(xs) if not isinstance(xs, (list, tuple)) else ad.stack(list(xs), axis=0)
    if xs.ndim < 2 or xs.shape[-2] == 0:
        raise ContractError("bilstm needs a non-empty sequence")
    single = xs.ndim == 2
    if single:
        xs = ad.reshape(xs, (1,) + xs.shape)
        mask = None if mask is None else np.asarray(mask)[None]
    hf, _ = run_lstm(xs, fwd, mask)
    hb, _ = run_lstm(xs, bwd, mask, reverse=True)
    out = ad.concat([hf, hb], axis=-1)
    return out[0] if single else out


class BiLSTM(Module):
    def __init__(self, rng, d_in: int, hidden: int):
        self.fwd = LstmParams(rng, d_in, hidden)
        self.bwd = LstmParams(rng, d_in, hidden)

    def __call__(self, xs, mask=None):
        return bilstm(xs, self.fwd, self.bwd, mask)


# -- modality attention ---------------------------------------------------
class AttentionParams(Module):
    def __init__(self, rng, dim: int):
        self.dim = dim
        self.W = glorot(rng, (dim, dim))
        self.b = zeros(dim)


def modality_attention(hs, params: AttentionParams):
    """Weight modality vectors by softmax(h . tanh(W h + b)).

    hs: list of n tensors [..., d]. Returns (beta [..., d], alpha [..., n]).
    """
    hs = [as_tensor(h) for h in hs]
    if not hs:
        raise ContractError("modality_attention needs at least one modality")
    dims = {h.shape for h in hs}
    if len(dims) != 1 or hs[0].shape[-1] != params.dim:
        raise ShapeError(f"modality vectors must share dimension {params.dim}: "
                         f"{[h.shape for h in hs]}")
    H = ad.stack(hs, axis=-2)                           # [..., n, d]
    u = ad.tanh(ad.matmul(H, params.W) + params.b)      # [..., n, d]
    scores = ad.tsum(H * u, axis=-1)                    # [..., n]
    alpha = ad.softmax(scores, axis=-1)
    beta = ad.tsum(ad.reshape(alpha, alpha.shape + (1,)) * H, axis=-2)
    return beta, alpha
