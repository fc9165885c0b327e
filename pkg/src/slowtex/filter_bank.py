"""Convolution filters composed from the whitening and slow projections."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import binio
from .cube_sampling import CubeSpec
from .errors import CorruptHeader, DimMismatch
from .linalg import WhiteningTransform
from .mrsfa import SlowProjection
from .video_io import write_pgm

SLF_MAGIC = b"SLF1"


@dataclass(frozen=True, eq=False)
class FilterBank:
    whitener: WhiteningTransform
    W: np.ndarray            # (h_s*w_s*d_s, q) full 3D weights
    b: np.ndarray            # (q,)
    eigenvalues: np.ndarray  # (q,) ascending
    spec: CubeSpec
    group_size: int = 8
    n_dropped: int = 0
    provenance: dict = field(default_factory=dict)

    @property
    def q(self) -> int:
        return self.W.shape[1]

    @property
    def slim(self) -> np.ndarray:
        """(q, h_s, w_s) first-frame slices of the 3D filters."""
        s = self.spec
        first = self.W[:s.h_s * s.w_s, :]
        return np.stack([first[:, j].reshape((s.h_s, s.w_s), order="F") for j in range(self.q)])

    @property
    def groups(self):
        return [tuple(range(i, min(i + self.group_size, self.q)))
                for i in range(0, self.q, self.group_size)]

    def response(self, x):
        """``W^T x + b`` for column samples x."""
        x = np.asarray(x, dtype=np.float64)
        out = self.W.T @ x
        return out + (self.b if x.ndim == 1 else self.b[:, None])


def compose_filters(whitener: WhiteningTransform, proj: SlowProjection, spec: CubeSpec,
                    group_size: int = 8, provenance=None) -> FilterBank:
    """Fold whitening and projection into one affine map ``W^T x + b``."""
    if whitener.out_dim != proj.U.shape[0]:
        raise DimMismatch(f"whitener out_dim {whitener.out_dim} != projection rows {proj.U.shape[0]}")
    if whitener.in_dim != spec.state_dim:
        raise DimMismatch(f"whitener in_dim {whitener.in_dim} != cube state dim {spec.state_dim}")
    w = whitener.projection.T @ proj.U
    b = -(w.T @ whitener.mean)
    return FilterBank(whitener, w, b, proj.eigenvalues.copy(), spec, group_size,
                      proj.n_dropped, dict(provenance or {}))


def slim(fb: FilterBank) -> FilterBank:
    # slim filters are derived from W on access, so this is the identity
    return fb


def group_filters(fb: FilterBank, group_size: int) -> FilterBank:
    if group_size < 1:
        raise ValueError("group_size must be positive")
    if fb.q % group_size:
        warnings.warn(f"{fb.q} filters do not divide into groups of {group_size}; "
                      f"last group has {fb.q % group_size}", stacklevel=2)
    return replace(fb, group_size=group_size)


def filter_image(f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    lo, hi = f.min(), f.max()
    if hi == lo:
        return np.full(f.shape, 128, dtype=np.uint8)
    return np.rint((f - lo) / (hi - lo) * 255.0).astype(np.uint8)


def export_filters(fb: FilterBank, directory) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for j, f in enumerate(fb.slim):
        p = directory / f"filter_{j:03d}.pgm"
        write_pgm(p, filter_image(f))
        paths.append(p)
    return paths


def to_bytes(fb: FilterBank) -> bytes:
    s = fb.spec
    parts = [SLF_MAGIC, binio.u32(s.h_s, s.w_s, s.d_s, fb.q, fb.group_size, fb.n_dropped),
             binio.f64(fb.whitener.mean), binio.f64(fb.whitener.projection),
             binio.f64(fb.W), binio.f64(fb.b), binio.f64(fb.eigenvalues)]
    meta = dict(fb.provenance)
    meta["eigen_floor"] = fb.whitener.eigen_floor
    meta["cube"] = [s.h_s, s.w_s, s.l_s, s.d_s]
    parts.append(binio.dumps_meta(meta))
    return b"".join(parts)


def from_bytes(data: bytes) -> FilterBank:
    body, meta = binio.split_meta(data)
    meta = dict(meta or {})
    rd = binio.Reader(body, SLF_MAGIC, "filters.slf")
    h, w, d, q, group_size, n_dropped = rd.u32(6)
    # l_s is not part of the fixed header; it travels in the trailer
    spec = CubeSpec(h, w, d, d)
    in_dim = h * w * d
    # whitened dimension m is implied by the payload length
    n_f64, rem = divmod(rd.remaining(), 8)
    m_total = n_f64 - in_dim - in_dim * q - 2 * q
    if rem or in_dim == 0 or m_total <= 0 or m_total % in_dim:
        raise CorruptHeader("filters.slf: payload length inconsistent with header")
    m = m_total // in_dim
    mean = rd.f64((in_dim,))
    proj = rd.f64((m, in_dim))
    weights = rd.f64((in_dim, q))
    bias = rd.f64((q,))
    eig = rd.f64((q,))
    rd.done()
    eigen_floor = float(meta.pop("eigen_floor", 0.0))
    whitener = WhiteningTransform(mean, proj, m, eigen_floor)
    if "cube" in meta:
        spec = CubeSpec(*meta.pop("cube"))
    return FilterBank(whitener, weights, bias, eig, spec, group_size, n_dropped, meta)


def save(fb: FilterBank, path):
    Path(path).write_bytes(to_bytes(fb))


def load(path) -> FilterBank:
    return from_bytes(Path(path).read_bytes())
