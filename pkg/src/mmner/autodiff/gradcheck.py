"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad

DENOM_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error ||a - n|| / max(||a|| + ||n||, DENOM_FLOOR).

    The floor keeps exactly-zero gradients from turning round-off into 100% error.
    """
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = max(np.linalg.norm(a) + np.linalg.norm(n), DENOM_FLOOR)
    return float(np.linalg.norm(a - n) / denom)


def numeric_grad(fn, tensor: Tensor, indices, h: float = 1e-4) -> np.ndarray:
    """d fn() / d tensor[idx] by the five-point central stencil at each flat index.

    Truncation error is O(h**4), so a wider step than the three-point rule can be
    used, which keeps float64 round-off (about eps * |f| / h) well below 1e-10.
    """
    flat = tensor.data.reshape(-1)
    out = np.empty(len(indices))
    with no_grad():
        for j, i in enumerate(indices):
            orig = flat[i]
            vals = []
            for step in (2 * h, h, -h, -2 * h):
                flat[i] = orig + step
                vals.append(float(fn().data))
            flat[i] = orig
            out[j] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
    return out


def check_gradients(fn, tensors, rng=None, max_entries: int | None = None,
                    h: float = 1e-4) -> float:
    """Compare tape gradients of scalar ``fn()`` to finite differences.

    ``fn`` must rebuild the computation from ``tensors`` on every call.
    When ``max_entries`` is set, that many coordinates are sampled per tensor.
    Returns the worst relative error across tensors.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.zero_grad()
    loss = fn()
    loss.backward()
    worst = 0.0
    for t in tensors:
        n = t.data.size
        if max_entries is not None and n > max_entries:
            idx = rng.choice(n, size=max_entries, replace=False)
        else:
            idx = np.arange(n)
        analytic = t.grad.reshape(-1)[idx].copy()
        numeric = numeric_grad(fn, t, idx, h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
