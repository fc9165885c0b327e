"""Convert a class-per-directory video corpus (avi, mp4, ...) to .dtv files
and a manifest.csv usable with ``slowtex --data``. Needs opencv-python."""
import argparse
from pathlib import Path

import cv2
import numpy as np

from slowtex.video_io import VideoManifest, rgb_to_luma, write_dtv, write_manifest_csv

SUFFIXES = {".avi", ".mp4", ".mov", ".mkv", ".mpg", ".mpeg", ".wmv"}


def read_gray(path, max_frames):
    cap = cv2.VideoCapture(str(path))
    frames = []
    while len(frames) < max_frames:
        ok, bgr = cap.read()
        if not ok:
            break
        frames.append(rgb_to_luma(bgr[:, :, ::-1].astype(np.float64)))
    cap.release()
    if not frames:
        raise ValueError(f"{path}: no frames decoded")
    return np.stack(frames)


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("src", type=Path, help="root with one subdirectory per class")
    p.add_argument("dst", type=Path)
    p.add_argument("--max-frames", type=int, default=256)
    return p.parse_args()


def main():
    args = parse_args()
    entries = []
    for path in sorted(args.src.rglob("*")):
        if path.suffix.lower() not in SUFFIXES:
            continue
        rel = path.relative_to(args.src).with_suffix(".dtv")
        out = args.dst / rel
        out.parent.mkdir(parents=True, exist_ok=True)
        write_dtv(out, read_gray(path, args.max_frames))
        entries.append((str(out), rel.parts[0], None))
    write_manifest_csv(args.dst / "manifest.csv", VideoManifest(entries))
    print(f"converted {len(entries)} videos into {args.dst}")


if __name__ == "__main__":
    main()
