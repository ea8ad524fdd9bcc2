"""Shared oracles for the test suite."""

from __future__ import annotations

import numpy as np

from ffcvsr.model import ModelConfig, init_weights
from ffcvsr.tensor import Tensor


def as_float64(weights):
    return {k: Tensor(v.data.astype(np.float64)) for k, v in weights.items()}


def numeric_grad(f, x: np.ndarray, h: float = 1e-6, coords=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x`` (modified in place, restored).

    With ``coords`` only those flat indices are probed; the result then has
    one entry per coordinate.
    """
    flat = x.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    out = []
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        out.append((up - down) / (2 * h))
    out = np.array(out)
    return out.reshape(x.shape) if coords is None else out


def rel_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def miniature(**kw) -> ModelConfig:
    base = dict(scale=4, trunk_width=8, feature_channels=8, resblocks_local=1, resblocks_context=1, temporal_radius=1)
    base.update(kw)
    return ModelConfig(**base)


def random_weights(cfg: ModelConfig, seed: int = 0, bias_scale: float = 0.05):
    """He-initialised weights with small random biases (zero biases hide bias-gradient bugs)."""
    w = init_weights(cfg, seed)
    rng = np.random.default_rng(seed + 1000)
    for k, v in w.items():
        if k.endswith(".bias"):
            v.data[...] = rng.normal(0, bias_scale, v.shape).astype(v.dtype)
    return w


def naive_conv2d(x, w, b, stride, padding):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for i in range(n):
        for oc in range(o):
            for y in range(ho):
                for xx in range(wo):
                    acc = 0.0
                    for ic in range(c):
                        for dy in range(kh):
                            for dx in range(kw):
                                acc += xp[i, ic, y * stride + dy, xx * stride + dx] * w[oc, ic, dy, dx]
                    out[i, oc, y, xx] = acc + (0.0 if b is None else b[oc])
    return out


def naive_conv2d_transpose(x, w, b, stride, padding):
    """Scatter each input pixel times the kernel, then crop ``padding`` from each side."""
    n, c, h, wd = x.shape
    _, o, k, _ = w.shape
    full = np.zeros((n, o, (h - 1) * stride + k, (wd - 1) * stride + k))
    for i in range(n):
        for ic in range(c):
            for y in range(h):
                for xx in range(wd):
                    full[i, :, y * stride:y * stride + k, xx * stride:xx * stride + k] += x[i, ic, y, xx] * w[ic]
    out = full[:, :, padding:full.shape[2] - padding, padding:full.shape[3] - padding]
    if b is not None:
        out = out + b[None, :, None, None]
    return out
