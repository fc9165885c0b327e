"""Spatial-temporal average pooling of feature-map volumes into local descriptors.

For a local volume of h_p x w_p x l_p pooled-map cells, every temporal slice
is average-pooled over its four quadrants (TL, TR, BL, BR) per channel, the
4*g slice vector is L2-normalised, slices are averaged inside each temporal
third, and the three thirds are concatenated into a 12*g descriptor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import binio
from .errors import DimMismatch, VolumeLargerThanMaps
from .linalg import WhiteningTransform, pca_whiten_apply, pca_whiten_fit

SLFV_MAGIC = b"SLFV"


@dataclass(frozen=True)
class PoolSpec:
    h_p: int = 6
    w_p: int = 6
    l_p: int = 9
    s_s: int = 1
    s_t: int = 3

    def __post_init__(self):
        if self.h_p % 2 or self.w_p % 2:
            raise ValueError("h_p and w_p must be even for the quadrant split")
        if self.l_p < 3:
            raise ValueError("l_p must be at least 3")
        if self.s_s < 1 or self.s_t < 1:
            raise ValueError("strides must be positive")

    @property
    def thirds(self):
        b1, b2 = self.l_p // 3, (2 * self.l_p) // 3
        return (0, b1), (b1, b2), (b2, self.l_p)


@dataclass(eq=False)
class LocalFeatureSet:
    features: np.ndarray                # (N, 12*g)
    positions: np.ndarray = None        # (N, 4): scale index, x, y, t
    group_id: int = 0
    channel_kind: str = "appearance"
    scales: list = field(default_factory=list)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def grid_counts(h: int, w: int, n: int, spec: PoolSpec):
    def count(size, win, stride):
        return (size - win) // stride + 1 if size >= win else 0
    return count(h, spec.h_p, spec.s_s), count(w, spec.w_p, spec.s_s), count(n, spec.l_p, spec.s_t)


def n_positions(h: int, w: int, n: int, spec: PoolSpec) -> int:
    ny, nx, nt = grid_counts(h, w, n, spec)
    return ny * nx * nt


def _box_means(maps, bh, bw):
    """Mean over every bh x bw box via integral images; (..., H-bh+1, W-bw+1)."""
    # centring each map keeps the running sums small; constant maps come out exact
    centre = maps.mean(axis=(-2, -1), keepdims=True)
    ii = np.zeros(maps.shape[:-2] + (maps.shape[-2] + 1, maps.shape[-1] + 1))
    ii[..., 1:, 1:] = (maps - centre).cumsum(axis=-2).cumsum(axis=-1)
    s = ii[..., bh:, bw:] - ii[..., :-bh, bw:] - ii[..., bh:, :-bw] + ii[..., :-bh, :-bw]
    return s / (bh * bw) + centre


def quadrant_means(maps, spec: PoolSpec) -> np.ndarray:
    """Quadrant averages at every grid position of every slice.

    maps (n, g, H, W) -> (n, Ny, Nx, 4, g), quadrant order TL, TR, BL, BR.
    """
    n, g, h, w = maps.shape
    ny, nx, _ = grid_counts(h, w, n, spec)
    if ny == 0 or nx == 0:
        raise VolumeLargerThanMaps(f"maps {h}x{w} smaller than volume {spec.h_p}x{spec.w_p}")
    hq, wq = spec.h_p // 2, spec.w_p // 2
    box = _box_means(np.asarray(maps, dtype=np.float64), hq, wq)
    ys = np.arange(ny) * spec.s_s
    xs = np.arange(nx) * spec.s_s
    out = np.empty((n, ny, nx, 4, g))
    for qi, (dy, dx) in enumerate(((0, 0), (0, wq), (hq, 0), (hq, wq))):
        sel = box[:, :, ys + dy][:, :, :, xs + dx]  # (n, g, ny, nx)
        out[:, :, :, qi, :] = np.moveaxis(sel, 1, 3)
    return out


def slice_vectors(maps, spec: PoolSpec) -> np.ndarray:
    """L2-normalised 4*g slice descriptors, (n, Ny, Nx, 4*g); zero stays zero."""
    q = quadrant_means(maps, spec)
    v = q.reshape(q.shape[:3] + (-1,))
    norms = np.sqrt(np.einsum("...i,...i->...", v, v))
    safe = np.where(norms > 0, norms, 1.0)
    return v / safe[..., None]


def pool_volume(maps, spec: PoolSpec, scale_index: int = 0):
    """Descriptors for all grid volumes of one group's maps.

    maps (n, g, H, W). Returns (features (N, 12*g), positions (N, 4)) in
    (t, y, x) grid order.
    """
    maps = getattr(maps, "maps", maps)
    n, g, h, w = maps.shape
    ny, nx, nt = grid_counts(h, w, n, spec)
    if nt == 0:
        raise VolumeLargerThanMaps(f"{n} frames shorter than volume length {spec.l_p}")
    sv = slice_vectors(maps, spec)
    feats = np.empty((nt, ny, nx, 3, 4 * g))
    for ti in range(nt):
        t0 = ti * spec.s_t
        for k, (a, b) in enumerate(spec.thirds):
            feats[ti, :, :, k, :] = sv[t0 + a:t0 + b].mean(axis=0)
    tt, yy, xx = np.meshgrid(np.arange(nt) * spec.s_t, np.arange(ny) * spec.s_s,
                             np.arange(nx) * spec.s_s, indexing="ij")
    pos = np.stack([np.full(tt.size, scale_index), xx.ravel(), yy.ravel(), tt.ravel()], axis=1)
    return feats.reshape(nt * ny * nx, 12 * g), pos


def naive_quadrant_means(maps, spec: PoolSpec) -> np.ndarray:
    """Straight-line quadrant averages with exactly rounded sums (math.fsum)."""
    maps = np.asarray(maps, dtype=np.float64)
    n, g, h, w = maps.shape
    ny, nx, _ = grid_counts(h, w, n, spec)
    hq, wq = spec.h_p // 2, spec.w_p // 2
    out = np.empty((n, ny, nx, 4, g))
    for t in range(n):
        for iy in range(ny):
            for ix in range(nx):
                y0, x0 = iy * spec.s_s, ix * spec.s_s
                for qi, (dy, dx) in enumerate(((0, 0), (0, wq), (hq, 0), (hq, wq))):
                    for c in range(g):
                        cells = maps[t, c, y0 + dy:y0 + dy + hq, x0 + dx:x0 + dx + wq]
                        out[t, iy, ix, qi, c] = math.fsum(cells.ravel().tolist()) / (hq * wq)
    return out


def integral_pool_oracle_check(maps, spec: PoolSpec, rtol: float = 1e-9) -> bool:
    """Compare integral-image quadrant pooling with the naive oracle.

    The tolerance is relative to the mean absolute value inside each
    quadrant, which bounds the conditioning of the sum.
    """
    maps = np.asarray(getattr(maps, "maps", maps), dtype=np.float64)
    fast = quadrant_means(maps, spec)
    slow = naive_quadrant_means(maps, spec)
    scale = quadrant_means(np.abs(maps), spec)
    return bool(np.all(np.abs(fast - slow) <= rtol * np.maximum(np.abs(slow), scale) + 1e-300))


def fit_reducer(features, out_dim: int = 48) -> WhiteningTransform:
    features = np.asarray(features, dtype=np.float64)
    return pca_whiten_fit(features.T, out_dim)


def reduce48(features, reducer: WhiteningTransform) -> np.ndarray:
    """Apply a (train-fit) PCA whitening to row features; (N, in) -> (N, out)."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[1] != reducer.in_dim:
        raise DimMismatch(f"feature dim {features.shape[1]} != reducer in_dim {reducer.in_dim}")
    return pca_whiten_apply(reducer, features.T).T


def write_features(path, features):
    f = np.asarray(features)
    n, d = f.shape
    Path(path).write_bytes(SLFV_MAGIC + binio.u32(d, n) + binio.f32(f))


def read_features(path) -> np.ndarray:
    rd = binio.Reader(Path(path).read_bytes(), SLFV_MAGIC, "features.bin")
    d, n = rd.u32(2)
    out = rd.f32((n, d))
    rd.done()
    return out
