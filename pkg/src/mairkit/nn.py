"""Parameter containers and the small layer set used by the network."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Tree of named parameters (leaf Tensors) and child modules."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
            self._modules.pop(name, None)
        elif isinstance(value, Module):
            self._modules[name] = value
            self._params.pop(name, None)
        object.__setattr__(self, name, value)

    def add_module(self, name: str, module: "Module") -> None:
        setattr(self, name, module)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def set_parameter(self, name: str, value: Tensor) -> None:
        owner = self
        *path, leaf = name.split(".")
        for part in path:
            owner = owner._modules[part]
        if leaf not in owner._params:
            raise KeyError(name)
        old = owner._params[leaf]
        if tuple(value.shape) != tuple(old.shape):
            raise ValueError(f"{name}: shape {value.shape} does not match {old.shape}")
        value.requires_grad = True
        setattr(owner, leaf, value)

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, arr in state.items():
            self.set_parameter(name, Tensor(arr))

    def astype(self, dtype) -> "Module":
        for name, p in list(self.named_parameters()):
            self.set_parameter(name, Tensor(p.data.astype(dtype)))
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=T.DEFAULT_DTYPE), requires_grad=True)


def uniform(rng: np.random.Generator, shape, bound: float) -> Tensor:
    return param(rng.uniform(-bound, bound, size=shape))


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 groups: int = 1, bias: bool = True):
        super().__init__()
        fan_in = (c_in // groups) * k * k
        bound = 1.0 / np.sqrt(fan_in)
        self.groups = groups
        self.weight = uniform(rng, (c_out, c_in // groups, k, k), bound)
        self.bias = uniform(rng, (c_out,), bound) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, groups=self.groups)


class ChannelLinear(Module):
    """Per-site linear map over the channel axis of B×C×H×W maps (a 1×1 conv without bias)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        super().__init__()
        self.weight = uniform(rng, (c_out, c_in), 1.0 / np.sqrt(c_in))

    def forward(self, x: Tensor) -> Tensor:
        *lead, C, H, W = x.shape
        y = T.matmul(self.weight, T.reshape(x, (*lead, C, H * W)))
        return T.reshape(y, (*lead, self.weight.shape[0], H, W))


class LayerNorm2d(Module):
    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = param(np.ones(channels))
        self.bias = param(np.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.weight, self.bias, axis=1, eps=self.eps)
