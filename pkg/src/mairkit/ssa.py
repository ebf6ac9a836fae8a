"""Sequence Shuffle Attention: channel-wise weighting of K directional maps.

The K maps are pooled to one value per channel, interleaved so that the K
entries of each channel sit next to each other, mixed by a per-channel K×K
affine map, de-interleaved, normalized, and used as weights for a sum of the
K maps.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .nn import Module, param
from .tensor import Tensor

NORMALIZATIONS = ("softmax", "sigmoid", "identity")


def spatial_avg_pool(x: Tensor) -> Tensor:
    """(..., D, H, W) -> (..., D)."""
    return T.mean(x, axis=(-2, -1))


def sequence_shuffle(v: Tensor, k: int) -> Tensor:
    """[x^1_1..x^1_D, ..., x^K_1..x^K_D] -> [x^1_1..x^K_1, ..., x^1_D..x^K_D]."""
    *lead, n = v.shape
    if n % k:
        raise ValueError(f"length {n} is not divisible by K={k}")
    d = n // k
    t = T.reshape(v, (*lead, k, d))
    t = T.transpose(t, (*range(len(lead)), len(lead) + 1, len(lead)))
    return T.reshape(t, (*lead, n))


def sequence_unshuffle(v: Tensor, k: int) -> Tensor:
    *lead, n = v.shape
    if n % k:
        raise ValueError(f"length {n} is not divisible by K={k}")
    d = n // k
    t = T.reshape(v, (*lead, d, k))
    t = T.transpose(t, (*range(len(lead)), len(lead) + 1, len(lead)))
    return T.reshape(t, (*lead, n))


def group_excite(shuffled: Tensor, weight: Tensor, bias: Tensor | None, k: int) -> Tensor:
    """Apply one K×K affine map to each contiguous group of K entries.

    ``weight`` is (D, K, K) for independent groups or (K, K) when shared;
    ``bias`` is (D, K) or (K,) accordingly.
    """
    *lead, n = shuffled.shape
    if n % k:
        raise ValueError(f"length {n} is not divisible by K={k}")
    d = n // k
    groups = T.reshape(shuffled, (*lead, d, k))
    if weight.ndim == 2:
        if weight.shape != (k, k):
            raise ValueError(f"shared group map must be {k}×{k}, got {weight.shape}")
        out = T.matmul(groups, T.transpose(weight))
    else:
        if weight.size != d * k * k:
            raise ValueError(f"expected {d * k * k} group weights (D·K²), got {weight.size}")
        w = T.reshape(weight, (d, k, k))
        out = T.reshape(T.matmul(w, T.reshape(groups, (*lead, d, k, 1))), (*lead, d, k))
    if bias is not None:
        out = out + bias
    return T.reshape(out, (*lead, n))


def normalize_weights(w: Tensor, mode: str, axis: int) -> Tensor:
    if mode == "softmax":
        return T.softmax(w, axis=axis)
    if mode == "sigmoid":
        return T.sigmoid(w)
    if mode == "identity":
        return w
    raise ValueError(f"unknown normalization {mode!r}; expected one of {NORMALIZATIONS}")


class SSA(Module):
    def __init__(self, d: int, k: int = 4, normalization: str = "softmax", shared: bool = False):
        super().__init__()
        if normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {normalization!r}")
        self.d, self.k = d, k
        self.normalization = normalization
        eye = np.eye(k) / k
        self.weight = param(eye if shared else np.broadcast_to(eye, (d, k, k)))
        self.bias = param(np.zeros(k if shared else (d, k)))

    def attention_weights(self, maps: Tensor) -> Tensor:
        """(..., K, D, H, W) -> normalized weights (..., K, D)."""
        *lead, k, d = maps.shape[:-2]
        pooled = spatial_avg_pool(maps)                       # ..., K, D
        concat = T.reshape(pooled, (*lead, k * d))
        mixed = group_excite(sequence_shuffle(concat, k), self.weight, self.bias, k)
        chunks = T.reshape(sequence_unshuffle(mixed, k), (*lead, k, d))
        return normalize_weights(chunks, self.normalization, axis=-2)

    def forward(self, maps: Tensor) -> Tensor:
        return ssa_aggregate(maps, self)


def ssa_aggregate(inputs: Tensor | Sequence[Tensor], params: SSA) -> Tensor:
    """Y = sum_i W^i * X^i with W^i broadcast over the spatial grid.

    ``inputs`` is a stacked (..., K, D, H, W) tensor or a list of K maps.
    """
    if not isinstance(inputs, Tensor):
        shapes = {tuple(x.shape) for x in inputs}
        if len(shapes) != 1:
            raise ValueError(f"directional maps must share one shape, got {sorted(shapes)}")
        inputs = T.stack(list(inputs), axis=-4)
    if inputs.shape[-4] != params.k or inputs.shape[-3] != params.d:
        raise ValueError(f"expected (..., {params.k}, {params.d}, H, W), got {inputs.shape}")
    w = params.attention_weights(inputs)
    weighted = inputs * T.reshape(w, (*w.shape, 1, 1))
    return T.tsum(weighted, axis=-4)
