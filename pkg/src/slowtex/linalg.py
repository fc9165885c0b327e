"""Dense symmetric eigensolvers and PCA whitening.

Eigenvalues are always returned in ascending order. Problem sizes in this
package are a few hundred dimensions at most, so everything is dense.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimMismatch, NoConvergence, NonFinite, SingularB


class RankDeficientWarning(UserWarning):
    """Fewer directions than requested survive the whitening eigen floor."""


@dataclass(frozen=True)
class EigenSolution:
    eigenvalues: np.ndarray   # ascending
    eigenvectors: np.ndarray  # one unit-norm column per eigenvalue

    def __len__(self):
        return len(self.eigenvalues)


def _as_symmetric(a, name="a"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimMismatch(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFinite(f"{name} contains NaN or Inf")
    # symmetrize exactly; callers build matrices like X X^T that are
    # symmetric only up to rounding
    return 0.5 * (a + a.T)


def _fix_signs(v):
    # deterministic sign: largest-magnitude entry of each column positive
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


def sym_eig(a) -> EigenSolution:
    """Full eigendecomposition of a symmetric matrix, ascending."""
    a = _as_symmetric(a)
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:  # LAPACK syevd did not converge
        raise NoConvergence(f"symmetric eigensolver failed: {exc}") from exc
    return EigenSolution(w, _fix_signs(v))


def gen_sym_eig(a, b, ridge: float = 1e-8) -> EigenSolution:
    """Solve ``a u = lam (b + ridge*tr(b)/n*I) u`` by Cholesky reduction.

    The generalized eigenvectors are rescaled to unit Euclidean norm, so
    they are b-orthogonal but not b-normalized.
    """
    a = _as_symmetric(a, "a")
    b = _as_symmetric(b, "b")
    if a.shape != b.shape:
        raise DimMismatch(f"a is {a.shape} but b is {b.shape}")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    n = a.shape[0]
    b_ridged = b + (ridge * np.trace(b) / n) * np.eye(n)
    try:
        # upper factor R with b' = R^T R
        r = scipy.linalg.cholesky(b_ridged, lower=False)
    except np.linalg.LinAlgError as exc:
        raise SingularB("b is not positive definite after ridging") from exc
    # C = R^-T a R^-1
    tmp = scipy.linalg.solve_triangular(r, a, trans="T", lower=False)
    c = scipy.linalg.solve_triangular(r, tmp.T, trans="T", lower=False).T
    sol = sym_eig(c)
    u = scipy.linalg.solve_triangular(r, sol.eigenvectors, lower=False)
    u = u / np.linalg.norm(u, axis=0)
    return EigenSolution(sol.eigenvalues, _fix_signs(u))


def generalized_residual(a, b, ridge, sol: EigenSolution) -> np.ndarray:
    """Per-column ``||a u - lam b' u|| / ((1+|lam|) * max(||a||_F, ||b'||_F))``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = a.shape[0]
    bp = b + (ridge * np.trace(b) / n) * np.eye(n)
    u = sol.eigenvectors
    res = np.linalg.norm(a @ u - (bp @ u) * sol.eigenvalues, axis=0)
    scale = (1.0 + np.abs(sol.eigenvalues)) * max(np.linalg.norm(a), np.linalg.norm(bp))
    return res / scale


@dataclass(frozen=True)
class WhiteningTransform:
    mean: np.ndarray        # (in_dim,)
    projection: np.ndarray  # (out_dim, in_dim)
    out_dim: int
    eigen_floor: float
    eigenvalues: np.ndarray | None = None  # retained variances, descending

    @property
    def in_dim(self) -> int:
        return self.mean.shape[0]

    def apply(self, x):
        return pca_whiten_apply(self, x)


def covariance_from_moments(n, total, outer):
    mean = total / n
    cov = outer / n - np.outer(mean, mean)
    return mean, 0.5 * (cov + cov.T)


def whitening_from_covariance(mean, cov, out_dim, eigen_floor=None):
    sol = sym_eig(cov)
    w = sol.eigenvalues[::-1]
    v = sol.eigenvectors[:, ::-1]
    if eigen_floor is None:
        eigen_floor = 1e-8 * max(w[0], 0.0)
    n_ok = int(np.sum(w > eigen_floor))
    if n_ok < out_dim:
        warnings.warn(
            f"only {n_ok} eigenvalues exceed the floor {eigen_floor:.3g}; "
            f"clamping out_dim {out_dim} -> {max(n_ok, 1)}",
            RankDeficientWarning, stacklevel=3)
        out_dim = max(n_ok, 1)
    w = w[:out_dim]
    v = v[:, :out_dim]
    proj = (v / np.sqrt(np.maximum(w, eigen_floor))).T
    return WhiteningTransform(np.asarray(mean, dtype=np.float64).copy(), proj,
                              out_dim, float(eigen_floor), w.copy())


def pca_whiten_fit(data, out_dim: int, eigen_floor: float | None = None) -> WhiteningTransform:
    """Fit PCA whitening on ``data`` whose columns are samples.

    Covariance uses the 1/n normalisation, so the transformed fitting set
    has identity sample covariance under the same convention.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise DimMismatch("data must be a matrix of column samples")
    in_dim, n = data.shape
    if not np.all(np.isfinite(data)):
        raise NonFinite("whitening data contains NaN or Inf")
    if out_dim < 1 or out_dim > in_dim:
        raise DimMismatch(f"out_dim must be in [1, {in_dim}], got {out_dim}")
    if n <= out_dim:
        raise DimMismatch(f"need more than out_dim={out_dim} samples, got {n}")
    mean = data.mean(axis=1)
    centered = data - mean[:, None]
    cov = centered @ centered.T / n
    return whitening_from_covariance(mean, cov, out_dim, eigen_floor)


def pca_whiten_apply(t: WhiteningTransform, x):
    """``projection @ (x - mean)`` for a vector or a matrix of column samples."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != t.in_dim:
        raise DimMismatch(f"expected leading dimension {t.in_dim}, got {x.shape[0]}")
    if x.ndim == 1:
        return t.projection @ (x - t.mean)
    return t.projection @ (x - t.mean[:, None])
