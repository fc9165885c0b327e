"""Grayscale video containers, loading and bilinear rescaling.

Two on-disk containers are understood:

* a directory of numerically named binary PGM (P5) or PPM (P6) frames;
* ``.dtv``: ``b"DTV1"``, then little-endian u32 height, width, length, then
  ``height*width*length`` bytes, frame-major and row-major within a frame.
"""
from __future__ import annotations

import csv
import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (CorruptHeader, DegenerateSize, DuplicatePath, EmptyDataset,
                     EmptyVideo, UnsupportedFormat)

DTV_MAGIC = b"DTV1"
LUMA = (0.299, 0.587, 0.114)
VIDEO_SUFFIXES = (".dtv",)
FRAME_SUFFIXES = (".pgm", ".ppm", ".pnm")


@dataclass(frozen=True, eq=False)
class GraySequence:
    """A single-channel video; ``frames`` has shape (length, height, width)."""

    frames: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[0] < 1:
            raise EmptyVideo(f"expected (length>=1, height, width) frames, got {frames.shape}")
        if min(frames.shape[1:]) < 1:
            raise DegenerateSize(f"frame size {frames.shape[1:]} is empty")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames contain NaN or Inf")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def __eq__(self, other):
        if not isinstance(other, GraySequence):
            return NotImplemented
        return self.frames.shape == other.frames.shape and np.array_equal(self.frames, other.frames)


@dataclass
class VideoManifest:
    entries: list = field(default_factory=list)  # (path, label, split or None)

    def __post_init__(self):
        paths = [str(e[0]) for e in self.entries]
        if len(set(paths)) != len(paths):
            raise DuplicatePath("manifest paths must be unique")
        for e in self.entries:
            if not e[1]:
                raise ValueError(f"empty label for {e[0]}")

    def __len__(self):
        return len(self.entries)

    @property
    def paths(self):
        return [e[0] for e in self.entries]

    @property
    def labels(self):
        return [e[1] for e in self.entries]

    def subset(self, split_tag):
        return VideoManifest([e for e in self.entries if e[2] == split_tag])


def rgb_to_luma(rgb):
    rgb = np.asarray(rgb, dtype=np.float64)
    y = rgb[..., 0] * LUMA[0] + rgb[..., 1] * LUMA[1] + rgb[..., 2] * LUMA[2]
    return np.clip(y, 0.0, 255.0)


def _read_token(buf, pos):
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise CorruptHeader("truncated PNM header")
    return buf[start:pos], pos


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM/PPM; returns (h, w) gray values (PPM is converted to luma)."""
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormat(f"{path}: not a binary PGM/PPM (magic {magic!r})")
    pos = 2
    try:
        w_tok, pos = _read_token(buf, pos)
        h_tok, pos = _read_token(buf, pos)
        m_tok, pos = _read_token(buf, pos)
        width, height, maxval = int(w_tok), int(h_tok), int(m_tok)
    except ValueError as exc:
        raise CorruptHeader(f"{path}: bad PNM header") from exc
    if width < 1 or height < 1 or not 0 < maxval < 256:
        raise CorruptHeader(f"{path}: unsupported dims/maxval {width}x{height}/{maxval}")
    pos += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    data = buf[pos:pos + need]
    if len(data) != need:
        raise CorruptHeader(f"{path}: expected {need} pixel bytes, found {len(data)}")
    img = np.frombuffer(data, dtype=np.uint8).astype(np.float64)
    if channels == 3:
        return rgb_to_luma(img.reshape(height, width, 3))
    return img.reshape(height, width)


def write_pgm(path, image):
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(img.tobytes())


def write_ppm(path, rgb):
    img = np.clip(np.rint(np.asarray(rgb)), 0, 255).astype(np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(img.tobytes())


def read_dtv(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise CorruptHeader(f"{path}: truncated .dtv header")
        if head[:4] != DTV_MAGIC:
            raise UnsupportedFormat(f"{path}: bad magic {head[:4]!r}")
        h, w, n = struct.unpack("<III", head[4:16])
        if n == 0:
            raise EmptyVideo(f"{path}: zero frames")
        if h == 0 or w == 0:
            raise CorruptHeader(f"{path}: zero frame size")
        payload = fh.read(h * w * n)
    if len(payload) != h * w * n:
        raise CorruptHeader(f"{path}: expected {h * w * n} bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(n, h, w)


def write_dtv(path, frames):
    """Write frames (length, h, w); values are rounded and clipped to 8 bits."""
    arr = np.asarray(frames)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    n, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(DTV_MAGIC + struct.pack("<III", h, w, n))
        fh.write(np.ascontiguousarray(arr).tobytes())


def _frame_files(directory):
    files = []
    for p in Path(directory).iterdir():
        if p.suffix.lower() in FRAME_SUFFIXES:
            m = re.search(r"(\d+)", p.stem)
            if m is None:
                raise UnsupportedFormat(f"{p}: frame names must be numeric")
            files.append((int(m.group(1)), p.name, p))
    files.sort()
    return [f[2] for f in files]


def load_video(path, format_hint: str | None = None, max_frames: int = 256) -> GraySequence:
    """Load a ``.dtv`` file or a PGM/PPM frame directory as a GraySequence."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    fmt = format_hint or ("frames" if path.is_dir() else path.suffix.lower().lstrip("."))
    if fmt == "dtv":
        frames = read_dtv(path)[:max_frames]
    elif fmt == "frames":
        files = _frame_files(path)[:max_frames]
        if not files:
            raise EmptyVideo(f"{path}: no PGM/PPM frames")
        imgs = [read_pnm(f) for f in files]
        if len({im.shape for im in imgs}) != 1:
            raise CorruptHeader(f"{path}: frames have differing sizes")
        frames = np.stack(imgs)
    else:
        raise UnsupportedFormat(f"{path}: unsupported container {fmt!r}")
    return GraySequence(frames.astype(np.float64), source_id=str(path))


def _interp_weights(n_in, n_out):
    # half-pixel centres (align_corners=False), edge-clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_frames(frames, out_h: int, out_w: int) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    _, h, w = frames.shape
    if (out_h, out_w) == (h, w):
        return frames.copy()
    lo, hi, f = _interp_weights(h, out_h)
    rows = frames[:, lo, :] * (1.0 - f)[None, :, None] + frames[:, hi, :] * f[None, :, None]
    lo, hi, f = _interp_weights(w, out_w)
    return rows[:, :, lo] * (1.0 - f) + rows[:, :, hi] * f


def scaled_size(dim: int, scale: float) -> int:
    return max(1, int(np.floor(scale * dim + 0.5)))


def rescale(seq: GraySequence, scale: float) -> GraySequence:
    """Bilinear spatial rescale; new sides are ``round(scale*side)``, at least 1."""
    if not scale > 0:
        raise DegenerateSize(f"scale must be positive, got {scale}")
    out_h = scaled_size(seq.height, scale)
    out_w = scaled_size(seq.width, scale)
    if out_h < 1 or out_w < 1:
        raise DegenerateSize("rescaled frame is empty")
    if (out_h, out_w) == (seq.height, seq.width):
        return seq
    return GraySequence(resize_frames(seq.frames, out_h, out_w), seq.source_id)


def _is_video(p: Path) -> bool:
    if p.is_file():
        return p.suffix.lower() in VIDEO_SUFFIXES
    return p.is_dir() and any(q.suffix.lower() in FRAME_SUFFIXES for q in p.iterdir())


def scan_manifest(root, layout: str = "class-subdirs", index_name: str = "manifest.csv") -> VideoManifest:
    """Index a dataset directory.

    ``class-subdirs``: every immediate subdirectory is a class and each
    ``.dtv`` file or frame directory inside it is one video.
    ``csv-index``: ``root/index_name`` with columns ``path,label[,split]``,
    paths relative to ``root``.
    Entries are sorted lexicographically by path in both layouts.
    """
    root = Path(root)
    if not root.is_dir():
        raise EmptyDataset(f"{root} is not a directory")
    entries = []
    if layout == "class-subdirs":
        for cls in sorted(p for p in root.iterdir() if p.is_dir()):
            for item in sorted(cls.iterdir()):
                if _is_video(item):
                    entries.append((str(item), cls.name, None))
    elif layout == "csv-index":
        index = root / index_name
        if not index.exists():
            raise EmptyDataset(f"{index} not found")
        entries = read_manifest_csv(index, base=root).entries
    else:
        raise ValueError(f"unknown layout {layout!r}")
    if not entries:
        raise EmptyDataset(f"no videos under {root}")
    entries.sort(key=lambda e: e[0])
    return VideoManifest(entries)


def read_manifest_csv(path, base=None) -> VideoManifest:
    path = Path(path)
    base = Path(base) if base is not None else path.parent
    entries = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip() in ("", "path"):
                continue
            p = row[0].strip()
            full = p if os.path.isabs(p) else str(base / p)
            split = row[2].strip() if len(row) > 2 and row[2].strip() else None
            entries.append((full, row[1].strip(), split))
    if not entries:
        raise EmptyDataset(f"{path} lists no videos")
    entries.sort(key=lambda e: e[0])
    return VideoManifest(entries)


def write_manifest_csv(path, manifest: VideoManifest, base=None):
    base = Path(base) if base is not None else Path(path).parent
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "label", "split"])
        for p, label, split in manifest.entries:
            rel = os.path.relpath(p, base)
            writer.writerow([rel, label, split or ""])
