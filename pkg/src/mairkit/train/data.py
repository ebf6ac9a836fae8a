"""Procedural training images and degradations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DegradationSpec:
    task: str = "denoise"      # "denoise" or "sr"
    sigma: float = 25 / 255    # noise std in [0, 1] intensity units
    scale: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("denoise", "sr"):
            raise ValueError(f"task must be 'denoise' or 'sr', got {self.task!r}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.task == "sr" and self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")


def _convex_polygon_mask(rng: np.random.Generator, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    H, W = yy.shape
    cy, cx = rng.uniform(0, H), rng.uniform(0, W)
    k = int(rng.integers(3, 7))
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=k))
    radius = rng.uniform(0.15, 0.45) * min(H, W)
    py = cy + radius * np.sin(angles)
    px = cx + radius * np.cos(angles)
    inside = np.ones((H, W), dtype=bool)
    for i in range(k):
        j = (i + 1) % k
        cross = (px[j] - px[i]) * (yy - py[i]) - (py[j] - py[i]) * (xx - px[i])
        inside &= cross >= 0
    return inside


def _one_image(rng: np.random.Generator, H: int, W: int) -> np.ndarray:
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    img = np.empty((3, H, W))
    # gradient field
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * xx / W + np.sin(theta) * yy / H)
    base = rng.uniform(0.2, 0.8, size=3)
    slope = rng.uniform(-0.4, 0.4, size=3)
    for c in range(3):
        img[c] = base[c] + slope[c] * ramp
    # sinusoid gratings
    for _ in range(int(rng.integers(1, 4))):
        phi = rng.uniform(0, np.pi)
        freq = rng.uniform(0.05, 0.5)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (np.cos(phi) * xx + np.sin(phi) * yy) + phase)
        img += rng.uniform(-0.15, 0.15, size=(3, 1, 1)) * wave
    # random polygons
    for _ in range(int(rng.integers(1, 5))):
        mask = _convex_polygon_mask(rng, yy, xx)
        color = rng.uniform(0, 1, size=(3, 1, 1))
        alpha = rng.uniform(0.5, 1.0)
        img = np.where(mask, (1 - alpha) * img + alpha * color, img)
    return np.clip(img, 0.0, 1.0)


def synth_images(count: int, H: int, W: int, seed: int) -> np.ndarray:
    """Deterministic textures in [0, 1], shaped (count, 3, H, W), float32."""
    if H < 16 or W < 16:
        raise ValueError(f"images must be at least 16×16, got {H}×{W}")
    rng = np.random.default_rng(seed)
    return np.stack([_one_image(rng, H, W) for _ in range(count)]).astype(np.float32)


def box_downsample(img: np.ndarray, r: int) -> np.ndarray:
    *lead, H, W = img.shape
    Hc, Wc = H - H % r, W - W % r
    img = img[..., :Hc, :Wc]
    return img.reshape(*lead, Hc // r, r, Wc // r, r).mean(axis=(-3, -1)).astype(img.dtype)


def degrade(clean: np.ndarray, spec: DegradationSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Additive white gaussian noise (denoise) or box downsampling (sr).

    Noise comes from ``rng`` when given, otherwise from ``spec.seed``.
    """
    if spec.task == "sr":
        return box_downsample(clean, spec.scale)
    if spec.sigma == 0:
        return clean.copy()
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    noise = rng.standard_normal(clean.shape) * spec.sigma
    return (clean + noise).astype(clean.dtype)
