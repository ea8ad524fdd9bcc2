"""Single-channel frame files and numbered frame directories."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .resample import rgb_to_luma
from .tensor import Tensor

EXTENSIONS = ("png", "pgm")


class FrameFormatError(ValueError):
    pass


def _read_pgm(path: Path) -> np.ndarray:
    buf = path.read_bytes()
    # header: magic, width, height, maxval separated by whitespace, comments allowed
    tokens, pos = [], 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)").match(buf, pos)
        if not m:
            raise FrameFormatError(f"{path}: truncated PGM header")
        tokens.append(m.group(2))
        pos = m.end()
    if tokens[0] != b"P5":
        raise FrameFormatError(f"{path}: only binary PGM (P5) is supported, found {tokens[0]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FrameFormatError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise FrameFormatError(f"{path}: unsupported bit depth (maxval {maxval}); only 8-bit is supported")
    pos += 1  # single whitespace byte before the raster
    raster = buf[pos:pos + w * h]
    if len(raster) != w * h:
        raise FrameFormatError(f"{path}: PGM raster truncated ({len(raster)} of {w * h} bytes)")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w)


def _write_pgm(path: Path, pixels: np.ndarray) -> None:
    h, w = pixels.shape
    path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + pixels.astype(np.uint8).tobytes())


def read_pixels(path, luma: bool = False) -> np.ndarray:
    """8-bit plane of an image file; color images need ``luma=True``."""
    path = Path(path)
    ext = path.suffix.lower().lstrip(".")
    if ext == "pgm":
        return _read_pgm(path)
    with Image.open(path) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.uint8)
        if im.mode in ("RGB", "RGBA", "P"):
            if not luma:
                raise FrameFormatError(f"{path}: color image (mode {im.mode}); pass --luma to convert")
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
            y = rgb_to_luma(rgb[..., 0], rgb[..., 1], rgb[..., 2]).data[0, 0]
            return np.floor(np.clip(y, 0, 1) * 255.0 + 0.5).astype(np.uint8)
        raise FrameFormatError(f"{path}: unsupported image mode {im.mode!r} (need 8-bit grayscale)")


def read_frame(path, luma: bool = False) -> Tensor:
    """Frame of shape (1, 1, H, W) with 8-bit value v mapped to v / 255."""
    px = read_pixels(path, luma)
    return Tensor((px.astype(np.float64) / 255.0).astype(np.float32)[None, None])


def to_pixels(frame) -> np.ndarray:
    """Clamp to [0, 1] and round half away from zero to uint8."""
    a = np.asarray(frame, dtype=np.float64)
    while a.ndim > 2:
        a = a[0]
    return np.floor(np.clip(a, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_frame(frame, path) -> None:
    path = Path(path)
    ext = path.suffix.lower().lstrip(".")
    px = to_pixels(frame)
    if ext == "pgm":
        _write_pgm(path, px)
    elif ext == "png":
        Image.fromarray(px, mode="L").save(path)
    else:
        raise FrameFormatError(f"{path}: unsupported output format {ext!r} (use png or pgm)")


def read_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_rgb(rgb: np.ndarray, path) -> None:
    px = np.floor(np.clip(rgb, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(px, mode="RGB").save(path)


_NAME = re.compile(r"^(?P<prefix>.*?)(?P<index>\d+)\.(?P<ext>png|pgm)$", re.IGNORECASE)


@dataclass(frozen=True)
class FrameStore:
    """A directory of frames named ``<prefix><index>.<ext>``, indices 1..count."""

    root: Path
    count: int
    prefix: str = "frame_"
    width: int = 4
    ext: str = "png"

    def path(self, index: int) -> Path:
        return self.root / f"{self.prefix}{index:0{self.width}d}.{self.ext}"

    @classmethod
    def open(cls, root) -> "FrameStore":
        root = Path(root)
        if not root.is_dir():
            raise FrameFormatError(f"{root}: not a directory")
        found = {}
        pattern = None
        for p in sorted(root.iterdir()):
            m = _NAME.match(p.name)
            if not m:
                continue
            key = (m["prefix"], len(m["index"]), m["ext"])
            if pattern is None:
                pattern = key
            elif key != pattern:
                raise FrameFormatError(f"{root}: mixed naming schemes ({p.name})")
            found[int(m["index"])] = p
        if not found:
            raise FrameFormatError(f"{root}: no frames found")
        if sorted(found) != list(range(1, len(found) + 1)):
            missing = sorted(set(range(1, max(found) + 1)) - set(found))[:5]
            raise FrameFormatError(f"{root}: frame numbering is not contiguous from 1 (missing {missing})")
        prefix, width, ext = pattern
        return cls(root, len(found), prefix, width, ext)

    @classmethod
    def create(cls, root, count: int = 0, prefix: str = "frame_", width: int = 4, ext: str = "png") -> "FrameStore":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        return cls(root, count, prefix, width, ext)

    def read(self, index: int, luma: bool = False) -> Tensor:
        if not 1 <= index <= self.count:
            raise IndexError(f"frame {index} outside 1..{self.count}")
        return read_frame(self.path(index), luma)

    def frames(self, luma: bool = False) -> Iterator[Tensor]:
        shape = None
        for i in range(1, self.count + 1):
            fr = self.read(i, luma)
            if shape is None:
                shape = fr.shape
            elif fr.shape != shape:
                raise FrameFormatError(f"{self.path(i)}: extent {fr.shape[2:]} differs from {shape[2:]}")
            yield fr

    def __len__(self) -> int:
        return self.count

    def write(self, index: int, frame) -> None:
        write_frame(frame, self.path(index))
