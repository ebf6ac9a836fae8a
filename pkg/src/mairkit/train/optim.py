"""Adam over named parameter arrays."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Returns new arrays; inputs are left untouched."""
    t = state.step + 1
    new_params, m_new, v_new = {}, {}, {}
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = beta1 * state.m.get(name, 0.0) + (1 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1 - beta2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_params[name] = (p - step).astype(p.dtype)
        m_new[name] = np.asarray(m, dtype=p.dtype)
        v_new[name] = np.asarray(v, dtype=p.dtype)
    return new_params, AdamState(t, m_new, v_new)


def cosine_lr(base: float, step: int, total: int, floor: float = 0.0) -> float:
    return floor + 0.5 * (base - floor) * (1 + math.cos(math.pi * min(step, total) / total))
