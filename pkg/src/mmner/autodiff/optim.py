"""First-order optimizers over lists of parameter tensors."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError


class OptimizerState:
    """Step counter plus, for Adam, per-parameter moment buffers."""

    def __init__(self, kind: str, learning_rate: float, params=None):
        if kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer kind {kind!r}")
        if learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        self.kind = kind
        self.learning_rate = float(learning_rate)
        self.step = 0
        if kind == "adam":
            self.m = [np.zeros_like(p.data) for p in params]
            self.v = [np.zeros_like(p.data) for p in params]
        else:
            self.m = self.v = None


class Optimizer:
    def __init__(self, params, state: OptimizerState):
        self.params = list(params)
        self.state = state

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        grads = [p.grad for p in self.params]
        for p, g in zip(self.params, grads):
            if g is None or g.shape != p.data.shape:
                raise ShapeError(f"gradient shape mismatch for parameter {p.shape}")
        self._update(grads)
        self.state.step += 1


class SGD(Optimizer):
    def __init__(self, params, lr: float = 0.01):
        params = list(params)
        super().__init__(params, OptimizerState("sgd", lr))

    def _update(self, grads):
        lr = self.state.learning_rate
        for p, g in zip(self.params, grads):
            p.data -= lr * g


class Adam(Optimizer):
    """Adam with bias-corrected moments."""

    def __init__(self, params, lr: float = 8e-5, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        params = list(params)
        super().__init__(params, OptimizerState("adam", lr, params))
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def _update(self, grads):
        s = self.state
        t = s.step + 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for p, g, m, v in zip(self.params, grads, s.m, s.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= s.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


def optimizer_step(params, grads, state: OptimizerState, beta1=0.9, beta2=0.999, eps=1e-8):
    """Functional form: apply one update to ``params`` in place using ``grads``."""
    params = list(params)
    for p, g in zip(params, grads):
        p.grad = np.asarray(g, dtype=np.float64)
    if state.kind == "sgd":
        opt = SGD(params, state.learning_rate)
    else:
        opt = Adam(params, state.learning_rate, beta1, beta2, eps)
    opt.state = state
    opt.step()
    return params, state
