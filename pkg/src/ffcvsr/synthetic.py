"""Procedural test videos with known sub-pixel motion."""

from __future__ import annotations

import numpy as np

from .resample import bilinear_downsample
from .tensor import Tensor


def panning_video(height: int, width: int, frames: int, seed: int = 0, shift: tuple[float, float] = (0.0, 1.0),
                  freq: tuple[float, float] = (1.0, 3.0), components: int = 4) -> np.ndarray:
    """Sum of random oriented sinusoids translating by ``shift`` (dy, dx) pixels per frame.

    Returns (frames, height, width) float32 in [0, 1]. Content is periodic over
    the frame, so it has no scene cuts and can run for any number of frames.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    waves = [
        (rng.uniform(*freq), rng.uniform(*freq), rng.uniform(0, 2 * np.pi), rng.uniform(0.05, 0.15))
        for _ in range(components)
    ]
    out = np.empty((frames, height, width), dtype=np.float32)
    for t in range(frames):
        y, x = yy + shift[0] * t, xx + shift[1] * t
        v = 0.5 + sum(a * np.sin(2 * np.pi * (fx * x / width + fy * y / height) + p) for fx, fy, p, a in waves)
        out[t] = np.clip(v, 0.0, 1.0)
    return out


def checkerboard_pan(height: int, width: int, frames: int, square: int = 8, speed: int = 1) -> np.ndarray:
    """Binary checkerboard (values 0.2 / 0.8) moving right by ``speed`` pixels per frame."""
    yy, xx = np.mgrid[0:height, 0:width]
    out = np.empty((frames, height, width), dtype=np.float32)
    for t in range(frames):
        board = ((yy // square) + ((xx + speed * t) // square)) % 2
        out[t] = np.where(board == 1, 0.8, 0.2)
    return out


def degrade(hr: np.ndarray, scale: int) -> np.ndarray:
    """Bilinear LR counterpart of an (L, H, W) HR stack."""
    return np.stack([bilinear_downsample(Tensor(f[None, None]), scale).data[0, 0] for f in hr])
