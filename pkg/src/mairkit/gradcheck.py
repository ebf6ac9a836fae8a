"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    checked: int

    @property
    def ok(self) -> bool:
        return self.max_rel_err <= 1e-4


def rel_error(analytic: np.ndarray, numeric: np.ndarray, scale: float = 0.0) -> float:
    """Worst absolute mismatch scaled by the largest gradient magnitude.

    ``scale`` lets the caller supply the magnitude of the full gradient
    tensor when only a subset of entries was probed.
    """
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), scale, 1e-10)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, coords: Sequence[tuple],
                 step: float = 1e-5) -> np.ndarray:
    """d fn / d x at ``coords`` by central differences, step scaled by |x|.

    ``x.data`` is perturbed in place and restored; ``fn`` must read it afresh.
    """
    buf = x.data
    buf.flags.writeable = True
    out = np.empty(len(coords))
    try:
        for n, c in enumerate(coords):
            orig = buf[c]
            h = step * max(1.0, abs(float(orig)))
            buf[c] = orig + h
            fp = float(fn().data.sum())
            buf[c] = orig - h
            fm = float(fn().data.sum())
            buf[c] = orig
            out[n] = (fp - fm) / (2 * h)
    finally:
        buf.flags.writeable = False
    return out


def check_gradients(fn: Callable[[], Tensor], inputs: dict[str, Tensor],
                    max_coords: int | None = None, seed: int = 0,
                    step: float = 1e-5) -> list[GradCheckResult]:
    """Compare tape gradients of scalar ``fn()`` against central differences.

    With ``max_coords`` set, a seeded random subset of each tensor's entries
    is probed instead of every entry.
    """
    with Tape() as tape:
        loss = fn()
    grads = backward(tape, loss)
    rng = np.random.default_rng(seed)
    results = []
    for name, x in inputs.items():
        all_coords = list(np.ndindex(*x.shape))
        if max_coords is not None and len(all_coords) > max_coords:
            pick = rng.choice(len(all_coords), size=max_coords, replace=False)
            coords = [all_coords[i] for i in sorted(pick)]
        else:
            coords = all_coords
        analytic = np.array([grads[x][c] for c in coords], dtype=np.float64)
        numeric = numeric_grad(fn, x, coords, step)
        full = float(np.abs(grads[x]).max(initial=0.0))
        results.append(GradCheckResult(name, rel_error(analytic, numeric, full), len(coords)))
    return results
