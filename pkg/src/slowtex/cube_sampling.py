"""Random spatio-temporal cube sampling and elemental-cube reformatting.

Cubes are arrays indexed ``[y, x, t]``. Vectorisation runs y fastest, then
x, then t (Fortran order on that layout).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, TooSmallVideo


@dataclass(frozen=True)
class CubeSpec:
    h_s: int = 7
    w_s: int = 7
    l_s: int = 15
    d_s: int = 6

    def __post_init__(self):
        if min(self.h_s, self.w_s, self.l_s, self.d_s) < 1:
            raise ValueError("cube sides must be positive")
        if self.d_s > self.l_s:
            raise ValueError(f"d_s={self.d_s} exceeds l_s={self.l_s}")

    @property
    def l_n(self) -> int:
        return self.l_s - self.d_s + 1

    @property
    def state_dim(self) -> int:
        return self.h_s * self.w_s * self.d_s

    @property
    def cube_dim(self) -> int:
        return self.h_s * self.w_s * self.l_s

    def check_learnable(self):
        if self.l_n < 2:
            raise ValueError(f"l_n={self.l_n}: need at least one temporal transition")


@dataclass(frozen=True, eq=False)
class CubeSequence:
    states: np.ndarray  # (h_s*w_s*d_s, l_n), one elemental cube per column
    spec: CubeSpec

    def __post_init__(self):
        if self.states.shape != (self.spec.state_dim, self.spec.l_n):
            raise DimMismatch(f"states shape {self.states.shape} does not match {self.spec}")

    @property
    def length(self) -> int:
        return self.states.shape[1]


def vectorize(cube) -> np.ndarray:
    return np.asarray(cube).ravel(order="F")


def unvectorize(vec, h: int, w: int, t: int) -> np.ndarray:
    return np.asarray(vec).reshape((h, w, t), order="F")


def _valid_counts(videos, spec):
    counts = []
    for v in videos:
        ny = v.height - spec.h_s + 1
        nx = v.width - spec.w_s + 1
        nt = v.length - spec.l_s + 1
        counts.append((ny, nx, nt) if min(ny, nx, nt) >= 1 else (0, 0, 0))
    return counts


def sample_positions(videos, count: int, spec: CubeSpec, seed: int):
    """Uniform draws over all valid (video, y, x, t) cube positions.

    Returns an int array of shape (count, 4). Videos too small for the
    cube are skipped with a warning.
    """
    if count < 1:
        raise ValueError("count must be positive")
    dims = _valid_counts(videos, spec)
    small = [i for i, d in enumerate(dims) if d[0] == 0]
    if small:
        if len(small) == len(dims):
            raise TooSmallVideo(f"no video can hold a {spec.h_s}x{spec.w_s}x{spec.l_s} cube")
        warnings.warn(f"skipping {len(small)} videos smaller than the cube", stacklevel=2)
    sizes = np.array([d[0] * d[1] * d[2] for d in dims], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    flat = rng.integers(0, offsets[-1], size=count)
    vid = np.searchsorted(offsets, flat, side="right") - 1
    local = flat - offsets[vid]
    out = np.empty((count, 4), dtype=np.int64)
    for row, (v, r) in enumerate(zip(vid, local)):
        ny, nx, _ = dims[v]
        y = r % ny
        x = (r // ny) % nx
        t = r // (ny * nx)
        out[row] = (v, y, x, t)
    return out


def extract_cube(video, y: int, x: int, t: int, spec: CubeSpec) -> np.ndarray:
    block = video.frames[t:t + spec.l_s, y:y + spec.h_s, x:x + spec.w_s]
    return np.transpose(block, (1, 2, 0))


def sample_cubes(videos, count: int, spec: CubeSpec, seed: int) -> np.ndarray:
    """Draw ``count`` raw cubes; returns an array (count, h_s, w_s, l_s)."""
    pos = sample_positions(videos, count, spec, seed)
    cubes = np.empty((count, spec.h_s, spec.w_s, spec.l_s), dtype=np.float64)
    for i, (v, y, x, t) in enumerate(pos):
        cubes[i] = extract_cube(videos[v], y, x, t, spec)
    return cubes


def reformat(cube, spec: CubeSpec) -> CubeSequence:
    """Column i holds frames [i, i+d_s-1] of the cube, vectorised."""
    cube = np.asarray(cube, dtype=np.float64)
    if cube.shape != (spec.h_s, spec.w_s, spec.l_s):
        raise DimMismatch(f"cube shape {cube.shape} does not match {spec}")
    return CubeSequence(reformat_batch(cube[None], spec)[0].T.copy(), spec)


def reformat_batch(cubes, spec: CubeSpec) -> np.ndarray:
    """Elemental states for many cubes: (n, l_n, state_dim)."""
    cubes = np.asarray(cubes, dtype=np.float64)
    n = cubes.shape[0]
    if cubes.shape[1:] != (spec.h_s, spec.w_s, spec.l_s):
        raise DimMismatch(f"cube shape {cubes.shape[1:]} does not match {spec}")
    out = np.empty((n, spec.l_n, spec.state_dim))
    for i in range(spec.l_n):
        block = cubes[:, :, :, i:i + spec.d_s]
        # Fortran order over (y, x, t) == C order over (t, x, y)
        out[:, i, :] = np.transpose(block, (0, 3, 2, 1)).reshape(n, -1)
    return out
