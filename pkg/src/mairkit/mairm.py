"""MaIR module (scan -> per-direction S6 -> unscan -> aggregate) and its gated host block."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import ChannelLinear, Conv2d, LayerNorm2d, Module, param
from .scan import ScanSpec, Strategy, apply_scan, four_directions, inverse_scan
from .ssa import SSA
from .ssm import SSMParams, s6_forward
from .tensor import Tensor


@dataclass(frozen=True)
class MaIRMConfig:
    channels: int
    stripe_width: int = 4
    shifted: bool = False
    d_state: int = 8
    normalization: str = "softmax"
    strategy: Strategy = Strategy.NSS
    shared_group: bool = False

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")
        if self.stripe_width < 1:
            raise ValueError(f"stripe width must be >= 1, got {self.stripe_width}")
        object.__setattr__(self, "strategy", Strategy(self.strategy))

    @property
    def scan_spec(self) -> ScanSpec:
        shifted = self.shifted and self.strategy is Strategy.NSS
        return ScanSpec(self.strategy, self.stripe_width, shifted, 0)


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return T.reshape(x, (1, *x.shape)), True
    return x, False


class MaIRM(Module):
    """``aggregator`` maps stacked (B, 4, D, H, W) maps to (B, D, H, W); SSA by default."""

    def __init__(self, cfg: MaIRMConfig, rng: np.random.Generator,
                 aggregator: Module | None = None):
        super().__init__()
        self.cfg = cfg
        self.ssm = SSMParams(cfg.channels, cfg.d_state, rng, copies=4)
        self.aggregator = aggregator if aggregator is not None else SSA(
            cfg.channels, 4, cfg.normalization, cfg.shared_group)

    def directional_maps(self, F: Tensor) -> Tensor:
        """(B, D, H, W) -> (B, 4, D, H, W): each direction scanned, processed, unscanned."""
        H, W = F.shape[-2:]
        perms = four_directions(self.cfg.scan_spec, H, W)
        seqs = T.stack([apply_scan(F, p) for p in perms], axis=1)
        out = s6_forward(seqs, self.ssm)
        return T.stack([inverse_scan(out[:, k], p) for k, p in enumerate(perms)], axis=1)

    def forward(self, F: Tensor) -> Tensor:
        F, squeeze = _batched(F)
        Y = self.aggregator(self.directional_maps(F))
        return Y[0] if squeeze else Y


def mairm_forward(F: Tensor, module: MaIRM) -> Tensor:
    return module(F)


class VMM(Module):
    """Gated block hosting a MaIRM.

    X + scale * Proj(SiLU(Lin_b(LN(X))) * LN2(MaIRM(SiLU(DWConv(Lin_a(LN(X)))))))
    """

    def __init__(self, channels: int, rng: np.random.Generator, expansion: int = 2,
                 stripe_width: int = 4, shifted: bool = False, d_state: int = 8,
                 normalization: str = "softmax", strategy: Strategy = Strategy.NSS,
                 shared_group: bool = False, aggregator: Module | None = None):
        super().__init__()
        inner = expansion * channels
        self.norm = LayerNorm2d(channels)
        self.lin_a = ChannelLinear(channels, inner, rng)
        self.lin_b = ChannelLinear(channels, inner, rng)
        self.dwconv = Conv2d(inner, inner, 3, rng, groups=inner)
        self.mairm = MaIRM(MaIRMConfig(inner, stripe_width, shifted, d_state, normalization,
                                       strategy, shared_group), rng, aggregator)
        self.out_norm = LayerNorm2d(inner)
        self.proj = ChannelLinear(inner, channels, rng)
        self.scale = param(np.ones(channels))

    def forward(self, X: Tensor) -> Tensor:
        X, squeeze = _batched(X)
        h = self.norm(X)
        a = T.silu(self.dwconv(self.lin_a(h)))
        m = self.out_norm(self.mairm(a))
        z = T.silu(self.lin_b(h))
        out = X + T.reshape(self.scale, (-1, 1, 1)) * self.proj(z * m)
        return out[0] if squeeze else out


def vmm_forward(X: Tensor, module: VMM) -> Tensor:
    return module(X)
