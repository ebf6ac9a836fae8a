"""Full network: shallow conv, residual Mamba groups, reconstruction heads, losses, file format."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .mairm import VMM
from .nn import Conv2d, Module
from .scan import Strategy
from .tensor import Tensor

FORMAT_NAME = "mairkit-model"
AGGREGATIONS = ("ssa", "add", "seq-gate", "channel-gate", "dense-pixel-gate", "dw-pixel-gate")
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 16
    n_groups: int = 2
    n_blocks: int = 2
    stripe_width: int = 4
    d_state: int = 8
    expansion: int = 2
    head: str = "restore"
    scale: int = 2
    in_channels: int = 3
    strategy: str = "nss"
    shift: bool = True
    aggregation: str = "ssa"
    normalization: str = "softmax"
    shared_group: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("channels", "n_groups", "n_blocks", "stripe_width", "d_state",
                     "expansion", "in_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.head not in ("restore", "sr"):
            raise ValueError(f"head must be 'restore' or 'sr', got {self.head!r}")
        if self.head == "sr" and self.scale not in (2, 3, 4):
            raise ValueError(f"SR scale must be 2, 3 or 4, got {self.scale}")
        Strategy(self.strategy)
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.uses_shift and self.stripe_width % 2:
            raise ValueError(f"shifted stripes need an even stripe width, got {self.stripe_width}")

    @property
    def uses_shift(self) -> bool:
        return self.shift and Strategy(self.strategy) is Strategy.NSS

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class FeatureMap:
    tensor: Tensor
    role: str  # "x", "F_S", "F_D" or "y'"

    def __post_init__(self):
        if not np.isfinite(self.tensor.data).all():
            raise ValueError(f"feature map {self.role} has non-finite values")


# aggregator factory hook: (inner_channels, rng) -> Module, used by ablations
AggregatorFactory = Callable[[int, np.random.Generator], Module]


class RMB(Module):
    def __init__(self, cfg: ModelConfig, shifted: bool, rng: np.random.Generator,
                 aggregator: AggregatorFactory | None = None):
        super().__init__()
        inner = cfg.expansion * cfg.channels
        self.shifted = shifted
        self.vmm = VMM(cfg.channels, rng, cfg.expansion, cfg.stripe_width, shifted, cfg.d_state,
                       cfg.normalization, Strategy(cfg.strategy), cfg.shared_group,
                       aggregator(inner, rng) if aggregator else None)
        self.conv = Conv2d(cfg.channels, cfg.channels, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.conv(self.vmm(x))


class RMG(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator,
                 aggregator: AggregatorFactory | None = None):
        super().__init__()
        self.n_blocks = cfg.n_blocks
        for j in range(cfg.n_blocks):
            # odd depth within a group uses shifted stripes
            self.add_module(f"block{j}", RMB(cfg, cfg.uses_shift and j % 2 == 1, rng, aggregator))
        self.conv = Conv2d(cfg.channels, cfg.channels, 3, rng)

    @property
    def blocks(self) -> list[RMB]:
        return [self._modules[f"block{j}"] for j in range(self.n_blocks)]

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for block in self.blocks:
            h = block(h)
        return x + self.conv(h)


class MaIR(Module):
    def __init__(self, cfg: ModelConfig, aggregator: AggregatorFactory | None = None):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        C = cfg.channels
        self.shallow = Conv2d(cfg.in_channels, C, 3, rng)
        for i in range(cfg.n_groups):
            self.add_module(f"group{i}", RMG(cfg, rng, aggregator))
        self.body_conv = Conv2d(C, C, 3, rng)
        if cfg.head == "sr":
            self.upsample = Conv2d(C, C * cfg.scale ** 2, 3, rng)
            self.tail = Conv2d(C, cfg.in_channels, 3, rng)
        else:
            self.tail = Conv2d(C, cfg.in_channels, 3, rng)

    @property
    def groups(self) -> list[RMG]:
        return [self._modules[f"group{i}"] for i in range(self.cfg.n_groups)]

    def body_parameter_names(self) -> list[str]:
        return [n for n, _ in self.named_parameters() if n.startswith(("group", "body_conv"))]

    def shallow_features(self, x: Tensor) -> Tensor:
        return self.shallow(x)

    def deep_features(self, fs: Tensor) -> Tensor:
        h = fs
        for g in self.groups:
            h = g(h)
        return fs + self.body_conv(h)

    def extract(self, x: Tensor) -> dict[str, FeatureMap]:
        fs = self.shallow_features(x)
        fd = self.deep_features(fs)
        y = self._head(x, fs, fd)
        return {"x": FeatureMap(x, "x"), "F_S": FeatureMap(fs, "F_S"),
                "F_D": FeatureMap(fd, "F_D"), "y'": FeatureMap(y, "y'")}

    def _head(self, x: Tensor, fs: Tensor, fd: Tensor) -> Tensor:
        if self.cfg.head == "sr":
            return self.tail(T.pixel_shuffle(self.upsample(fs + fd), self.cfg.scale))
        return self.tail(fs + fd) + x

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-3] != self.cfg.in_channels:
            raise ValueError(f"input has {x.shape[-3]} channels, model expects {self.cfg.in_channels}")
        fs = self.shallow_features(x)
        return self._head(x, fs, self.deep_features(fs))


def build_model(cfg: ModelConfig, aggregator: AggregatorFactory | None = None) -> MaIR:
    """Assemble the network; the aggregator defaults to the one named by ``cfg.aggregation``."""
    if aggregator is None and cfg.aggregation != "ssa":
        from .train.aggregators import aggregator_factory
        aggregator = aggregator_factory(cfg.aggregation, cfg.normalization, cfg.shared_group)
    return MaIR(cfg, aggregator)


def forward_sr(model: MaIR, x: Tensor) -> Tensor:
    """y' = conv(pixel_shuffle(up(F_S + F_D)))."""
    if model.cfg.head != "sr":
        raise ValueError(f"forward_sr needs an SR head, model head is {model.cfg.head!r}")
    return model(x)


def forward_restore(model: MaIR, x: Tensor) -> Tensor:
    """y' = conv(F_S + F_D) + x."""
    if model.cfg.head != "restore":
        raise ValueError(f"forward_restore needs a restore head, model head is {model.cfg.head!r}")
    return model(x)


def _check_pair(pred: Tensor, target: Tensor) -> None:
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match target {target.shape}")


def loss_l1(pred: Tensor, target) -> Tensor:
    target = T.as_tensor(target, like=pred)
    _check_pair(pred, target)
    return T.mean(T.tabs(pred - target))


def loss_charbonnier(pred: Tensor, target, eps: float = 1e-3) -> Tensor:
    """Mean over elements of sqrt((pred - target)^2 + eps^2)."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    target = T.as_tensor(target, like=pred)
    _check_pair(pred, target)
    # same value as mean(sqrt(d² + eps²)); written so a zero residual gives eps exactly
    return T.mean(T.hypot(pred - target, eps) - eps) + eps


# ---------------------------------------------------------------------------
# serialization: u64 header length | JSON header | little-endian float32 payload


def model_bytes(model: MaIR) -> bytes:
    manifest = []
    payload = bytearray()
    for name, p in model.named_parameters():
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": len(payload),
                         "nbytes": arr.nbytes})
        payload += arr.tobytes()
    header = json.dumps({"format": FORMAT_NAME, "version": FORMAT_VERSION,
                         "config": model.cfg.to_dict(), "tensors": manifest},
                        sort_keys=True, separators=(",", ":")).encode()
    return struct.pack("<Q", len(header)) + header + bytes(payload)


def save_model(model: MaIR, path) -> None:
    Path(path).write_bytes(model_bytes(model))


def model_from_bytes(blob: bytes) -> MaIR:
    (hlen,) = struct.unpack_from("<Q", blob, 0)
    header = json.loads(blob[8:8 + hlen])
    if header.get("format") != FORMAT_NAME:
        raise ValueError("not a mairkit model file")
    if header.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {header.get('version')}")
    model = build_model(ModelConfig.from_dict(header["config"]))
    base = 8 + hlen
    state = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=entry["nbytes"] // 4, offset=start)
        state[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
    model.load_state_dict(state)
    return model


def load_model(path) -> MaIR:
    return model_from_bytes(Path(path).read_bytes())
