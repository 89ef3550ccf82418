"""Minimal parameter containers built on :mod:`mre.numcore`."""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .numcore import Tensor


class Module:
    """Collects parameters from attributes, in attribute-definition order."""

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + key + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=p.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data[...] = arr


def uniform_init(rng, shape, fan_in, dtype=np.float64):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    """``x @ weight + bias`` with weight stored as (in, out)."""

    def __init__(self, d_in, d_out, rng, dtype=np.float64):
        self.weight = nc.parameter(uniform_init(rng, (d_in, d_out), d_in, dtype))
        self.bias = nc.parameter(uniform_init(rng, (d_out,), d_in, dtype))

    @property
    def d_in(self):
        return self.weight.shape[0]

    @property
    def d_out(self):
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        x = nc.as_tensor(x)
        if x.ndim == 1:
            return nc.reshape(nc.matmul(nc.expand_dims(x, 0), self.weight), (self.d_out,)) + self.bias
        return nc.matmul(x, self.weight) + self.bias


class MLP(Module):
    """Two affine layers with a ReLU between them."""

    def __init__(self, d_in, d_hidden, d_out, rng, dtype=np.float64):
        self.hidden = Linear(d_in, d_hidden, rng, dtype)
        self.out = Linear(d_hidden, d_out, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.out(nc.relu(self.hidden(x)))
