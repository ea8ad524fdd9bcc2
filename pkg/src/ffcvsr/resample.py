"""Fixed resampling and color conversion.

Both resamplers use half-pixel centers: output sample ``i`` of an axis
resized from ``n_in`` to ``n_out`` reads the source at
``(i + 0.5) * n_in / n_out - 0.5``. Source taps falling outside the image are
clamped to the nearest edge sample. Everything is separable, so each resize is
two small matrix products with per-axis interpolation matrices.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .tensor import ShapeError, Tensor

KEYS_A = -0.5


def keys_kernel(t, a: float = KEYS_A):
    """Keys cubic convolution kernel."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def _linear_kernel(t):
    return np.maximum(0.0, 1.0 - np.abs(t))


@lru_cache(maxsize=64)
def _axis_matrix(n_in: int, n_out: int, method: str) -> np.ndarray:
    """(n_out, n_in) matrix whose rows are clamped interpolation weights."""
    if method == "bicubic":
        kernel, radius = keys_kernel, 2
    elif method == "bilinear":
        kernel, radius = _linear_kernel, 1
    else:
        raise ValueError(f"unknown resampling method {method!r}")
    m = np.zeros((n_out, n_in), dtype=np.float64)
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(pos).astype(int)
    for off in range(-radius + 1, radius + 1):
        src = base + off
        wts = kernel(pos - src)
        np.add.at(m, (np.arange(n_out), np.clip(src, 0, n_in - 1)), wts)
    m.setflags(write=False)
    return m


def _resize(frame: Tensor, out_h: int, out_w: int, method: str) -> Tensor:
    data = np.asarray(frame)
    if data.ndim != 4:
        raise ShapeError(f"expected a (batch, channels, height, width) frame, got shape {data.shape}")
    h, w = data.shape[2:]
    if h == 0 or w == 0:
        raise ShapeError("cannot resample an empty frame")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output extent {out_h}x{out_w} is not positive")
    if (out_h, out_w) == (h, w):
        return Tensor(data.copy())
    # accumulate in float64 so constants survive the cast back exactly
    out = _axis_matrix(h, out_h, method) @ data.astype(np.float64) @ _axis_matrix(w, out_w, method).T
    return Tensor(np.ascontiguousarray(out, dtype=data.dtype))


def bicubic_resize(frame: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize to an arbitrary extent with the a = -0.5 Keys kernel (no prefilter)."""
    return _resize(frame, out_h, out_w, "bicubic")


def bicubic_upsample(frame: Tensor, scale: int) -> Tensor:
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    h, w = np.shape(frame)[2:]
    return _resize(frame, h * scale, w * scale, "bicubic")


def bilinear_downsample(frame: Tensor, scale: int) -> Tensor:
    """Downsample by an integer factor with plain bilinear taps.

    There is deliberately no anti-aliasing: for scale 4 every output pixel is
    the mean of two source samples per axis.
    """
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    h, w = np.shape(frame)[2:]
    if h % scale or w % scale:
        raise ShapeError(f"frame extent {h}x{w} is not divisible by scale {scale}")
    return _resize(frame, h // scale, w // scale, "bilinear")


def rgb_to_luma(r, g, b) -> Tensor:
    """Studio-swing luma of planes in [0, 1], returned as a (1, 1, H, W) frame.

    Planes may be 2-D or already shaped (1, 1, H, W).
    """
    r, g, b = (np.asarray(p, dtype=np.float64) for p in (r, g, b))
    if not (r.shape == g.shape == b.shape):
        raise ShapeError(f"plane shape mismatch: {r.shape}, {g.shape}, {b.shape}")
    y = (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0
    if y.ndim == 2:
        y = y[None, None]
    return Tensor(y.astype(np.float32))


def rgb_to_chroma(r, g, b) -> tuple[np.ndarray, np.ndarray]:
    """Studio-swing Cb, Cr planes matching :func:`rgb_to_luma`."""
    r, g, b = (np.asarray(p, dtype=np.float64) for p in (r, g, b))
    cb = (-37.797 * r - 74.203 * g + 112.0 * b + 128.0) / 255.0
    cr = (112.0 * r - 93.786 * g - 18.214 * b + 128.0) / 255.0
    return cb, cr


def ycbcr_to_rgb(y, cb, cr) -> np.ndarray:
    """Inverse of the studio-swing conversion; returns an (H, W, 3) array in [0, 1]."""
    y, cb, cr = (np.asarray(p, dtype=np.float64) * 255.0 for p in (y, cb, cr))
    r = 1.164383562 * (y - 16) + 1.596026786 * (cr - 128)
    g = 1.164383562 * (y - 16) - 0.391762290 * (cb - 128) - 0.812967647 * (cr - 128)
    b = 1.164383562 * (y - 16) + 2.017232143 * (cb - 128)
    return np.clip(np.stack([r, g, b], axis=-1) / 255.0, 0.0, 1.0)
