"""Parameter containers with dotted-path naming."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor that the optimizer updates."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Walks attributes to discover parameters and child modules.

    Lists and tuples of modules are traversed with their index in the path,
    so ``self.layers[1].attn.wq`` is named ``layers.1.attn.wq``.
    """

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict, strict: bool = True):
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, arr in state.items():
            if name not in own:
                continue
            p = own[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.data.shape}")
            p.data[...] = arr

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def uniform(rng: np.random.Generator, shape, bound: float) -> Parameter:
    return Parameter(rng.uniform(-bound, bound, size=shape))


def glorot(rng: np.random.Generator, shape) -> Parameter:
    fan_in, fan_out = shape[-2], shape[-1]
    if len(shape) == 3:
        fan_in *= shape[0]
        fan_out *= shape[0]
    return uniform(rng, shape, float(np.sqrt(6.0 / (fan_in + fan_out))))


def zeros(shape) -> Parameter:
    return Parameter(np.zeros(shape))


def ones(shape) -> Parameter:
    return Parameter(np.ones(shape))
