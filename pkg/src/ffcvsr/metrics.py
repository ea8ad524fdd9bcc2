"""PSNR / SSIM on single-channel frames, temporal profiles and per-video reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_INF = math.inf

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _plane(x) -> np.ndarray:
    """Squeeze a frame (2-D or (1, 1, H, W)) to a float64 plane."""
    a = np.asarray(x, dtype=np.float64)
    while a.ndim > 2 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ValueError(f"expected a single-channel frame, got shape {np.shape(x)}")
    return a


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _plane(a), _plane(b)
    if a.shape != b.shape:
        raise ValueError(f"frame shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def quantize(x) -> np.ndarray:
    """Clamp to [0, 1] and round half away from zero onto the 8-bit grid."""
    a = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.floor(a * 255.0 + 0.5) / 255.0


def psnr(a, b) -> float:
    """Peak 1.0. Identical frames give ``PSNR_INF``."""
    a, b = _pair(a, b)
    err = float(np.mean((a - b) ** 2))
    if err == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(1.0 / err)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    k = len(taps)
    rows = sliding_window_view(img, k, axis=0) @ taps
    return sliding_window_view(rows, k, axis=1) @ taps


def ssim_map(a, b, data_range: float = 1.0) -> np.ndarray:
    a, b = _pair(a, b)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"frame {a.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    taps = gaussian_window()
    mu_a, mu_b = _filter_valid(a, taps), _filter_valid(b, taps)
    var_a = _filter_valid(a * a, taps) - mu_a * mu_a
    var_b = _filter_valid(b * b, taps) - mu_b * mu_b
    cov = _filter_valid(a * b, taps) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, data_range: float = 1.0) -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), mean over valid positions."""
    return float(np.mean(ssim_map(a, b, data_range)))


def temporal_profile(video: Sequence, row: int) -> np.ndarray:
    """Stack pixel row ``row`` of every frame; output row t comes from frame t."""
    if len(video) == 0:
        raise ValueError("temporal profile needs at least one frame")
    planes = [_plane(f) for f in video]
    h = planes[0].shape[0]
    if not 0 <= row < h:
        raise ValueError(f"row {row} out of range for frame height {h}")
    return np.stack([p[row] for p in planes])


@dataclass
class EvalReport:
    psnr: list[float]
    ssim: list[float]
    border_crop: int = 0
    quantized: bool = False
    profile: np.ndarray | None = field(default=None, repr=False)

    @property
    def frames(self) -> int:
        return len(self.psnr)

    @property
    def infinite_frames(self) -> int:
        return sum(1 for v in self.psnr if math.isinf(v))

    @property
    def mean_psnr(self) -> float:
        """Mean over frames with finite PSNR; ``PSNR_INF`` if none are finite."""
        finite = [v for v in self.psnr if not math.isinf(v)]
        return float(np.mean(finite)) if finite else PSNR_INF

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    def to_text(self) -> str:
        lines = [
            f"# ffcvsr-eval v1 frames={self.frames} border_crop={self.border_crop} "
            f"quantized={int(self.quantized)} infinite_psnr_frames={self.infinite_frames}",
            "frame_index\tpsnr_db\tssim",
        ]
        for i, (p, s) in enumerate(zip(self.psnr, self.ssim), start=1):
            lines.append(f"{i}\t{_fmt(p)}\t{s:.6f}")
        lines.append(f"average\t{_fmt(self.mean_psnr)}\t{self.mean_ssim:.6f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        psnrs, ssims = [], []
        header = {}
        for line in text.splitlines():
            if line.startswith("#"):
                header = dict(kv.split("=", 1) for kv in line[1:].split() if "=" in kv)
                continue
            cols = line.split("\t")
            if cols[0] in ("frame_index", "average") or not line.strip():
                continue
            if len(cols) != 3:
                raise ValueError(f"malformed report row: {line!r}")
            psnrs.append(float(cols[1]))
            ssims.append(float(cols[2]))
        return cls(psnrs, ssims, int(header.get("border_crop", 0)), header.get("quantized") == "1")


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.4f}"


def evaluate_video(sr: Sequence, hr: Sequence, border_crop: int = 4, quantize_output: bool = False) -> EvalReport:
    """Per-frame PSNR/SSIM after cropping ``border_crop`` pixels from every side."""
    if len(sr) != len(hr):
        raise ValueError(f"video length mismatch: {len(sr)} SR vs {len(hr)} HR frames")
    if len(sr) == 0:
        raise ValueError("cannot evaluate an empty video")
    if border_crop < 0:
        raise ValueError(f"border_crop must be non-negative, got {border_crop}")
    psnrs, ssims = [], []
    for s, h in zip(sr, hr):
        a, b = _pair(s, h)
        if 2 * border_crop >= min(a.shape):
            raise ValueError(f"border_crop {border_crop} removes the whole {a.shape[0]}x{a.shape[1]} frame")
        if border_crop:
            a = a[border_crop:-border_crop, border_crop:-border_crop]
            b = b[border_crop:-border_crop, border_crop:-border_crop]
        if quantize_output:
            a, b = quantize(a), quantize(b)
        psnrs.append(psnr(a, b))
        ssims.append(ssim(a, b))
    return EvalReport(psnrs, ssims, border_crop, quantize_output)
