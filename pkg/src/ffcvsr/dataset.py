"""Training-clip extraction from frame directories.

Each source video is rescaled to every pyramid level (bicubic), cut into
non-overlapping ``clip_length`` x ``patch_size`` x ``patch_size`` HR clips, and
paired with LR clips made by bilinear downsampling. Clips are written as tensor
containers (entries ``lr`` and ``hr``); a tab-separated manifest records where
each clip came from.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import container
from .frames import FrameStore
from .resample import bicubic_resize, bilinear_downsample
from .tensor import Tensor
from .trainer import Clip

log = logging.getLogger(__name__)

MANIFEST_HEADER = "# ffcvsr-manifest v1"
COLUMNS = ("path", "source", "level", "y", "x", "frame_start", "frame_end")
DEFAULT_PYRAMID = (4, 6, 8, 12, 16)


@dataclass
class ManifestEntry:
    path: str
    source: str
    level: int
    y: int
    x: int
    frame_start: int
    frame_end: int


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    params: dict[str, str] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [MANIFEST_HEADER]
        lines.append("# " + " ".join(f"{k}={v}" for k, v in self.params.items()))
        lines.append("\t".join(COLUMNS))
        for e in self.entries:
            lines.append("\t".join(str(getattr(e, c)) for c in COLUMNS))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Manifest":
        lines = text.splitlines()
        if not lines or lines[0].strip() != MANIFEST_HEADER:
            raise ValueError(f"not a manifest (expected header {MANIFEST_HEADER!r})")
        out = cls()
        for line in lines[1:]:
            if line.startswith("#"):
                out.params.update(kv.split("=", 1) for kv in line[1:].split() if "=" in kv)
            elif line.strip() and not line.startswith(COLUMNS[0] + "\t"):
                cols = line.split("\t")
                if len(cols) != len(COLUMNS):
                    raise ValueError(f"manifest row has {len(cols)} columns, expected {len(COLUMNS)}: {line!r}")
                out.entries.append(ManifestEntry(cols[0], cols[1], *map(int, cols[2:])))
        return out


def read_manifest(path) -> Manifest:
    return Manifest.from_text(Path(path).read_text(encoding="utf-8"))


def load_clips(manifest_path) -> list[Clip]:
    """Load every clip listed in a manifest (paths are relative to the manifest)."""
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    clips = []
    for e in manifest.entries:
        raw = container.read_tensors(manifest_path.parent / e.path)
        clips.append(Clip(raw["lr"], raw["hr"]))
    return clips


def max_mean_abs_diff(frames: np.ndarray) -> float:
    """Largest mean absolute difference between consecutive frames."""
    if len(frames) < 2:
        return 0.0
    return float(np.max(np.mean(np.abs(np.diff(frames.astype(np.float64), axis=0)), axis=(1, 2))))


def level_frame(frame: Tensor, factor: int) -> np.ndarray:
    """Frame rescaled by 1/``factor`` (floor of each extent) as a 2-D array."""
    if factor == 1:
        return frame.data[0, 0]
    h, w = frame.shape[2:]
    return bicubic_resize(frame, h // factor, w // factor).data[0, 0]


def prepare_dataset(sources: FrameStore | Sequence[FrameStore], out_dir, scale: int = 4,
                    pyramid_factors: Sequence[int] = DEFAULT_PYRAMID, patch_size: int = 128,
                    clip_length: int = 10, mad_threshold: float = 0.1) -> Manifest:
    if isinstance(sources, FrameStore):
        sources = [sources]
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    if patch_size % scale:
        raise ValueError(f"patch_size {patch_size} is not divisible by scale {scale}")
    if clip_length < 1:
        raise ValueError(f"clip_length must be >= 1, got {clip_length}")
    if not pyramid_factors or any(f < 1 for f in pyramid_factors):
        raise ValueError(f"pyramid factors must be positive integers, got {list(pyramid_factors)}")

    out_dir = Path(out_dir)
    (out_dir / "clips").mkdir(parents=True, exist_ok=True)
    manifest = Manifest()
    skipped_short = skipped_scene = 0

    for store in sources:
        if len(store) < clip_length:
            log.warning("%s: %d frames is shorter than clip length %d; skipped", store.root, len(store), clip_length)
            skipped_short += 1
            continue
        frames = store.frames()
        for k in range(len(store) // clip_length):
            chunk = [next(frames) for _ in range(clip_length)]
            start = k * clip_length + 1
            for factor in pyramid_factors:
                level = np.stack([level_frame(f, factor) for f in chunk])
                if max_mean_abs_diff(level) > mad_threshold:
                    skipped_scene += 1
                    continue
                h, w = level.shape[1:]
                for y in range(0, h - patch_size + 1, patch_size):
                    for x in range(0, w - patch_size + 1, patch_size):
                        hr = np.ascontiguousarray(level[:, y:y + patch_size, x:x + patch_size])
                        lr = np.stack([bilinear_downsample(Tensor(f[None, None]), scale).data[0, 0] for f in hr])
                        rel = f"clips/clip_{len(manifest.entries):06d}.ffcw"
                        container.write_tensors(out_dir / rel, {"lr": lr, "hr": hr})
                        manifest.entries.append(ManifestEntry(
                            rel, str(store.root), factor, y, x, start, start + clip_length - 1))

    manifest.params = {
        "scale": str(scale),
        "patch_size": str(patch_size),
        "clip_length": str(clip_length),
        "pyramid_factors": ",".join(str(f) for f in pyramid_factors),
        "mad_threshold": repr(float(mad_threshold)),
        "clips": str(len(manifest.entries)),
        "skipped_short_videos": str(skipped_short),
        "skipped_scene_changes": str(skipped_scene),
    }
    (out_dir / "manifest.tsv").write_text(manifest.to_text(), encoding="utf-8")
    return manifest
