"""Alternative ways to merge the four directional maps, for aggregation ablations.

Each aggregator maps stacked (B, K, D, H, W) maps to (B, D, H, W).
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..net import AGGREGATIONS
from ..nn import Conv2d, Module, param
from ..ssa import SSA, spatial_avg_pool
from ..tensor import Tensor

K = 4


class AddAggregator(Module):
    """Plain sum of the directional maps."""

    def forward(self, maps: Tensor) -> Tensor:
        return T.tsum(maps, axis=1)


class SequenceGate(Module):
    """One softmax weight per sequence, from all pooled channels."""

    def __init__(self, d: int, rng: np.random.Generator):
        super().__init__()
        self.weight = param(rng.uniform(-1, 1, size=(K, K * d)) / np.sqrt(K * d))
        self.bias = param(np.zeros(K))

    def forward(self, maps: Tensor) -> Tensor:
        B, k, d = maps.shape[:3]
        pooled = T.reshape(spatial_avg_pool(maps), (B, k * d, 1))
        logits = T.reshape(T.matmul(self.weight, pooled), (B, k)) + self.bias
        w = T.reshape(T.softmax(logits, axis=-1), (B, k, 1, 1, 1))
        return T.tsum(maps * w, axis=1)


class ChannelGate(Module):
    """Squeeze-excitation over all K·D pooled channels (bottleneck of 2), sigmoid gates."""

    def __init__(self, d: int, rng: np.random.Generator, hidden: int = 2):
        super().__init__()
        n = K * d
        self.w1 = param(rng.uniform(-1, 1, size=(hidden, n)) / np.sqrt(n))
        self.b1 = param(np.zeros(hidden))
        self.w2 = param(rng.uniform(-1, 1, size=(n, hidden)) / np.sqrt(hidden))
        self.b2 = param(np.zeros(n))

    def forward(self, maps: Tensor) -> Tensor:
        B, k, d = maps.shape[:3]
        pooled = T.reshape(spatial_avg_pool(maps), (B, k * d, 1))
        h = T.silu(T.matmul(self.w1, pooled) + T.reshape(self.b1, (-1, 1)))
        gate = T.sigmoid(T.matmul(self.w2, h) + T.reshape(self.b2, (-1, 1)))
        return T.tsum(maps * T.reshape(gate, (B, k, d, 1, 1)), axis=1)


class DensePixelGate(Module):
    """Per-pixel softmax over sequences from a dense 1×1 conv across all K·D channels."""

    def __init__(self, d: int, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(K * d, K, 1, rng)

    def forward(self, maps: Tensor) -> Tensor:
        B, k, d, H, W = maps.shape
        logits = self.conv(T.reshape(maps, (B, k * d, H, W)))
        w = T.reshape(T.softmax(logits, axis=1), (B, k, 1, H, W))
        return T.tsum(maps * w, axis=1)


class DepthwisePixelGate(Module):
    """Per-pixel, per-channel sigmoid gates from a depthwise 3×3 conv."""

    def __init__(self, d: int, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(K * d, K * d, 3, rng, groups=K * d)

    def forward(self, maps: Tensor) -> Tensor:
        B, k, d, H, W = maps.shape
        gate = T.sigmoid(self.conv(T.reshape(maps, (B, k * d, H, W))))
        return T.tsum(maps * T.reshape(gate, (B, k, d, H, W)), axis=1)


def aggregator_factory(name: str, normalization: str = "softmax", shared: bool = False):
    """(inner_channels, rng) -> aggregator module for the named variant."""
    if name == "ssa":
        return lambda d, rng: SSA(d, K, normalization, shared)
    if name == "add":
        return lambda d, rng: AddAggregator()
    if name == "seq-gate":
        return SequenceGate
    if name == "channel-gate":
        return ChannelGate
    if name == "dense-pixel-gate":
        return DensePixelGate
    if name == "dw-pixel-gate":
        return DepthwisePixelGate
    raise ValueError(f"unknown aggregation {name!r}; expected one of {AGGREGATIONS}")
