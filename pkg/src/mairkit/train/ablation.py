"""Toy-scale ablations: scan strategy, aggregation, stripe width."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
from dataclasses import dataclass

import numpy as np

from ..net import ModelConfig, build_model
from .data import DegradationSpec
from .loop import TrainRun, train

log = logging.getLogger(__name__)

AXES = ("scan_strategy", "aggregation", "stripe_width")
CSV_FIELDS = ("variant", "params", "steps", "psnr_db", "ssim", "wall_seconds", "status")

SCAN_VARIANTS = {
    "NSS": {"strategy": "nss", "shift": True},
    "NSS-no-shift": {"strategy": "nss", "shift": False},
    "Z": {"strategy": "z"},
    "S": {"strategy": "s"},
    "LOCAL_WINDOW": {"strategy": "local_window"},
    "HILBERT": {"strategy": "hilbert"},
}
AGGREGATION_VARIANTS = {name: {"aggregation": name} for name in
                        ("ssa", "add", "seq-gate", "channel-gate", "dense-pixel-gate",
                         "dw-pixel-gate")}
STRIPE_VARIANTS = {f"w_s={w}": {"stripe_width": w} for w in (2, 4, 8, 16, 32)}


@dataclass
class AblationRow:
    variant: str
    params: int
    steps: int
    psnr_db: float
    ssim: float
    wall_seconds: float
    status: str

    def as_csv_row(self) -> list:
        return [self.variant, self.params, self.steps, f"{self.psnr_db:.4f}",
                f"{self.ssim:.5f}", f"{self.wall_seconds:.1f}", self.status]


def default_run(steps: int, seed: int = 0) -> TrainRun:
    """Lightweight ×2 SR on 32×32 patches (16×16 low-resolution inputs)."""
    return TrainRun(model=ModelConfig(head="sr", scale=2, seed=seed),
                    degradation=DegradationSpec(task="sr", scale=2, seed=seed),
                    steps=steps, eval_every=max(steps, 1), seed=seed)


def variants(axis: str) -> dict[str, dict]:
    if axis == "scan_strategy":
        return SCAN_VARIANTS
    if axis == "aggregation":
        return AGGREGATION_VARIANTS
    if axis == "stripe_width":
        return STRIPE_VARIANTS
    raise ValueError(f"unknown ablation axis {axis!r}; expected one of {AXES}")


def converged(loss_log: list[float]) -> bool:
    """Mean loss over the last tenth of steps at least 10% below the first tenth."""
    if len(loss_log) < 10 or not all(math.isfinite(v) for v in loss_log):
        return False
    n = max(1, len(loss_log) // 10)
    return float(np.mean(loss_log[-n:])) < 0.9 * float(np.mean(loss_log[:n]))


def run_ablation(axis: str, budget: int, base: TrainRun | None = None) -> list[AblationRow]:
    """Train one matched toy model per variant on identical data and seeds."""
    table = variants(axis)
    base = base if base is not None else default_run(budget)
    base = dataclasses.replace(base, steps=budget, eval_every=max(budget, 1))
    if axis == "stripe_width":
        # low-resolution input must be at least as wide as the widest stripe
        scale = base.degradation.scale if base.degradation.task == "sr" else 1
        widest = max(v["stripe_width"] for v in table.values())
        base = dataclasses.replace(base, patch=max(base.patch, widest * scale))
    rows = []
    for name, overrides in table.items():
        cfg = dataclasses.replace(base.model, **overrides)
        run = dataclasses.replace(base, model=cfg)
        params = build_model(cfg).num_parameters()
        result = train(run)
        status = "converged" if converged([e["loss"] for e in result.log]) else "non-converged"
        rows.append(AblationRow(name, params, budget, result.val_psnr, result.val_ssim,
                                result.wall_seconds, status))
        log.info("%s: %d params, %.3f dB (%s)", name, params, result.val_psnr, status)
    return rows


def rows_to_csv(rows: list[AblationRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for row in rows:
        writer.writerow(row.as_csv_row())
    return buf.getvalue()
