"""Dense float64 tensor with a reverse-mode gradient tape.

Every differentiable operation records its parents and a closure that maps
the upstream gradient to one gradient per parent. ``backward`` walks the tape
in reverse topological order, visiting each node once.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, NumericDomainError, ShapeError

DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=DTYPE) if not isinstance(data, np.ndarray) else data
        if arr.dtype != DTYPE:
            arr = arr.astype(DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op})"

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- backward pass ----------------------------------------------------
    def backward(self) -> int:
        """Accumulate d(self)/d(node) into ``grad`` of every requiring node.

        Returns the number of tape nodes visited (each exactly once).
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("loss is not connected to any tensor requiring grad")

        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        visits = 0
        for node in reversed(order):
            g = grads.pop(id(node), None)
            visits += 1
            if g is None:
                continue
            node.grad = node.grad + g if node.grad is not None else g.copy()
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        Tensor.last_backward_visits = visits
        return visits

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)


Tensor.last_backward_visits = 0


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, opname: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise binary ---------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    if np.any(b.data == 0):
        raise NumericDomainError("division by zero")

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(a.data / b.data, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    if not np.isscalar(exponent):
        raise ContractError("power() takes a scalar exponent")
    if exponent < 1 and np.any(a.data <= 0) and exponent != int(exponent):
        raise NumericDomainError("fractional power of a non-positive value")

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _node(a.data ** exponent, (a,), bw, "pow")


def where(cond, a, b) -> Tensor:
    """Select ``a`` where ``cond`` is true, else ``b`` (cond is not differentiated)."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)

    def bw(g):
        return (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                _unbroadcast(np.where(cond, 0.0, g), b.shape))

    return _node(np.where(cond, a.data, b.data), (a, b), bw, "where")


# -- elementwise unary ----------------------------------------------------
def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericDomainError("log of a non-positive value")
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise NumericDomainError("sqrt of a negative value")
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch-free stable form
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _node(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "exp": exp, "log": log, "relu": relu,
          "sin": sin, "cos": cos, "sqrt": sqrt, "neg": neg}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, *inputs) -> Tensor:
    """Dispatch a pointwise operation by name."""
    if op in _UNARY:
        if len(inputs) != 1:
            raise ContractError(f"{op} takes one operand")
        return _UNARY[op](inputs[0])
    if op in _BINARY:
        if len(inputs) != 2:
            raise ContractError(f"{op} takes two operands")
        return _BINARY[op](*inputs)
    raise ContractError(f"unknown elementwise op {op!r}")


# -- reductions -----------------------------------------------------------
def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)),)

    return _node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.data.size // max(out.size, 1)

    def bw(g):
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)) / count,)

    return _node(out, (a,), bw, "mean")


def logsumexp(a, axis=-1, keepdims=False) -> Tensor:
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.sum(np.exp(a.data - m), axis=axis, keepdims=True)
    out_k = np.log(s) + m
    soft = np.exp(a.data - out_k)
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def bw(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * soft,)

    return _node(out, (a,), bw, "logsumexp")


def softmax(a, axis=-1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    a = as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise NumericDomainError("softmax input contains non-finite values")
    z = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _node(out, (a,), bw, "softmax")


def log_softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise NumericDomainError("log_softmax input contains non-finite values")
    z = a.data - np.max(a.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def bw(g):
        return (g - soft * np.sum(g, axis=axis, keepdims=True),)

    return _node(out, (a,), bw, "log_softmax")


# -- linear algebra -------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Matrix product of the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} x {b.shape}") from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return _node(out, (a, b), bw, "matmul")


# -- shape manipulation ---------------------------------------------------
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} into {tuple(shape)}") from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _node(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    if isinstance(index, Tensor):
        raise ContractError("index with integer arrays, not tensors")
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _node(np.array(out), (a,), bw, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of an empty list")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat along axis {axis}: incompatible shapes {shapes}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tensors, bw, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("stack of an empty list")
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"stack: incompatible shapes {shapes}") from None

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _node(out, tensors, bw, "stack")


def embedding(weight, ids) -> Tensor:
    """Row lookup ``weight[ids]`` with scatter-add gradient."""
    weight = as_tensor(weight)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ContractError(f"embedding index out of range [0, {weight.shape[0]})")

    def bw(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weight.shape[-1]))
        return (full,)

    return _node(weight.data[ids], (weight,), bw, "embedding")


# -- convolution and pooling ----------------------------------------------
def _same_pad(ks: int) -> tuple:
    left = (ks - 1) // 2
    return left, ks - 1 - left


def conv1d(x, kernels, bias=None, padding: str = "same") -> Tensor:
    """1-D convolution over the length axis.

    x: [..., length, ch_in]; kernels: [ks, ch_in, ch_out]; bias: [ch_out].
    ``same`` zero-pads (ks-1)//2 on the left and the remainder on the right.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if kernels.ndim != 3:
        raise ShapeError(f"conv1d kernels must be [ks, ch_in, ch_out], got {kernels.shape}")
    ks, cin, cout = kernels.shape
    if x.ndim < 2 or x.shape[-1] != cin:
        raise ShapeError(f"conv1d channel mismatch: input {x.shape}, kernels {kernels.shape}")
    length = x.shape[-2]
    if padding == "same":
        pl, pr = _same_pad(ks)
    elif padding == "valid":
        if ks > length:
            raise ShapeError(f"conv1d kernel size {ks} exceeds input length {length}")
        pl = pr = 0
    else:
        raise ContractError(f"unknown padding {padding!r}")
    lead = x.shape[:-2]
    pad_width = [(0, 0)] * len(lead) + [(pl, pr), (0, 0)]
    xp = np.pad(x.data, pad_width)
    out_len = length + pl + pr - ks + 1
    # cols[..., t, k, c] = xp[..., t + k, c]
    cols = np.stack([xp[..., k:k + out_len, :] for k in range(ks)], axis=-2)
    cols2 = cols.reshape(lead + (out_len, ks * cin))
    w2 = kernels.data.reshape(ks * cin, cout)
    out = cols2 @ w2
    parents = [x, kernels]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def bw(g):
        gx = gk = gb = None
        if x.requires_grad:
            gcols = (g @ w2.T).reshape(lead + (out_len, ks, cin))
            gxp = np.zeros_like(xp)
            for k in range(ks):
                gxp[..., k:k + out_len, :] += gcols[..., k, :]
            gx = gxp[..., pl:pl + length, :]
        if kernels.requires_grad:
            flat_c = cols2.reshape(-1, ks * cin)
            gk = (flat_c.T @ g.reshape(-1, cout)).reshape(ks, cin, cout)
        if bias is not None and bias.requires_grad:
            gb = g.reshape(-1, cout).sum(axis=0)
        return (gx, gk, gb) if bias is not None else (gx, gk)

    return _node(out, parents, bw, "conv1d")


def maxpool1d(x, pool: int) -> Tensor:
    """Max over non-overlapping windows of the length axis (ceil mode).

    x: [..., length, ch] -> [..., ceil(length / pool), ch]. Gradient routes to
    the first maximal position of each window.
    """
    x = as_tensor(x)
    if pool < 1:
        raise ContractError("pool size must be >= 1")
    if pool == 1:
        return _node(x.data.copy(), (x,), lambda g: (g,), "maxpool1d")
    lead, length, ch = x.shape[:-2], x.shape[-2], x.shape[-1]
    out_len = -(-length // pool)
    padded = out_len * pool
    xp = np.pad(x.data, [(0, 0)] * len(lead) + [(0, padded - length), (0, 0)],
                constant_values=-np.inf)
    win = xp.reshape(lead + (out_len, pool, ch))
    arg = np.argmax(win, axis=-2)
    out = np.take_along_axis(win, arg[..., None, :], axis=-2)[..., 0, :]

    def bw(g):
        gw = np.zeros(win.shape)
        np.put_along_axis(gw, arg[..., None, :], g[..., None, :], axis=-2)
        return (gw.reshape(lead + (padded, ch))[..., :length, :],)

    return _node(out, (x,), bw, "maxpool1d")
