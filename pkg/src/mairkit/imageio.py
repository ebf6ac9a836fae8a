"""Binary PGM (P5) / PPM (P6) with maxval 255, mapped to float arrays in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _tokens(blob: bytes, count: int) -> tuple[list[bytes], int]:
    out, i, n = [], 0, len(blob)
    while len(out) < count:
        while i < n and blob[i:i + 1].isspace():
            i += 1
        if i < n and blob[i:i + 1] == b"#":
            while i < n and blob[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not blob[j:j + 1].isspace() and blob[j:j + 1] != b"#":
            j += 1
        if j == i:
            raise ValueError("truncated netpbm header")
        out.append(blob[i:j])
        i = j
    return out, i + 1  # one whitespace byte separates header and raster


def decode_pnm(blob: bytes) -> np.ndarray:
    (magic, w, h, maxval), offset = _tokens(blob, 4)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported netpbm type {magic!r}; only P5 and P6")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"only maxval 255 is supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    n = w * h * channels
    raster = np.frombuffer(blob, dtype=np.uint8, count=n, offset=offset)
    if raster.size != n:
        raise ValueError("truncated netpbm raster")
    return raster.reshape(h, w, channels).transpose(2, 0, 1).astype(np.float32) / 255.0


def encode_pnm(img: np.ndarray) -> bytes:
    """(1|3, H, W) or (H, W) floats in [0, 1] -> P5/P6 bytes (round, then clamp)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"expected a 1- or 3-channel C×H×W image, got shape {img.shape}")
    c, h, w = img.shape
    raster = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    magic = b"P6" if c == 3 else b"P5"
    return magic + f"\n{w} {h}\n255\n".encode() + raster.tobytes()


def read_image(path) -> np.ndarray:
    return decode_pnm(Path(path).read_bytes())


def write_image(path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_pnm(img))
