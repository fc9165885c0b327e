"""Diagonal-covariance GMMs and Fisher-vector encoding of local feature sets."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import binio
from .errors import DimMismatch, EmptyFeatureSet, MissingSet, TooFewSamples
from .linalg import WhiteningTransform, pca_whiten_apply

SFE_MAGIC = b"SFE1"
_LOG_2PI = np.log(2.0 * np.pi)


class GmmWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class GmmModel:
    weights: np.ndarray    # (K,)
    means: np.ndarray      # (K, d)
    variances: np.ndarray  # (K, d)
    var_floor: float = 0.0
    log_likelihoods: tuple = ()  # per EM iteration, training set

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _log_joint(x, gmm):
    """log(pi_k) + log N(x_n | mu_k, diag var_k), shape (N, K)."""
    inv = 1.0 / gmm.variances
    maha = (x * x) @ inv.T - 2.0 * x @ (gmm.means * inv).T + np.sum(gmm.means ** 2 * inv, axis=1)
    log_det = np.sum(np.log(gmm.variances), axis=1)
    return np.log(gmm.weights) - 0.5 * (maha + log_det + x.shape[1] * _LOG_2PI)


def logsumexp(a, axis=None, keepdims=False):
    top = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - top), axis=axis, keepdims=True)) + top
    return out if keepdims else np.squeeze(out, axis=axis)


def posteriors(x, gmm: GmmModel) -> np.ndarray:
    lj = _log_joint(np.asarray(x, dtype=np.float64), gmm)
    return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))


def log_likelihood(x, gmm: GmmModel) -> float:
    return float(np.sum(logsumexp(_log_joint(np.asarray(x, dtype=np.float64), gmm), axis=1)))


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers[i] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[i]) ** 2, axis=1))
    return centers


def _lloyd(x, centers, iters=10):
    for _ in range(iters):
        d2 = (np.sum(x * x, axis=1)[:, None] - 2.0 * x @ centers.T
              + np.sum(centers * centers, axis=1)[None, :])
        assign = np.argmin(d2, axis=1)
        new = centers.copy()
        for k in range(centers.shape[0]):
            members = x[assign == k]
            if len(members):
                new[k] = members.mean(axis=0)
        if np.array_equal(new, centers):
            break
        centers = new
    return centers


def fit_gmm(features, K: int = 16, seed: int = 0, max_iters: int = 100, tol: float = 1e-6,
            var_floor_rel: float = 1e-6) -> GmmModel:
    """EM for a diagonal-covariance GMM.

    Initialisation: k-means++ seeded means refined by a few Lloyd steps,
    uniform weights, global per-dimension variances.
    """
    x = np.asarray(features, dtype=np.float64)
    n, d = x.shape
    if n < 10 * K:
        raise TooFewSamples(f"need at least {10 * K} samples for K={K}, got {n}")
    rng = np.random.default_rng(seed)
    global_var = x.var(axis=0)
    var_floor = var_floor_rel * max(float(global_var.mean()), np.finfo(float).tiny)
    means = _lloyd(x, _kmeans_pp(x, K, rng))
    gmm = GmmModel(np.full(K, 1.0 / K), means,
                   np.tile(np.maximum(global_var, var_floor), (K, 1)), var_floor)
    history = []
    converged = False
    for _ in range(max_iters):
        lj = _log_joint(x, gmm)
        lse = logsumexp(lj, axis=1, keepdims=True)
        history.append(float(lse.sum()))
        if len(history) > 1 and history[-1] - history[-2] <= tol * abs(history[-2]):
            converged = True
            break
        gamma = np.exp(lj - lse)
        nk = gamma.sum(axis=0)
        means = gmm.means.copy()
        variances = gmm.variances.copy()
        weights = nk / n
        alive = nk > 1e-10 * n
        g = gamma[:, alive]
        means[alive] = (g.T @ x) / nk[alive, None]
        variances[alive] = (g.T @ (x * x)) / nk[alive, None] - means[alive] ** 2
        if not alive.all():
            # reseed empty components at the worst-explained points
            worst = np.argsort(lse.ravel(), kind="stable")
            for j, k in enumerate(np.flatnonzero(~alive)):
                warnings.warn(f"GMM component {k} collapsed; reseeding", GmmWarning, stacklevel=2)
                means[k] = x[worst[j]]
                variances[k] = global_var
                weights[k] = 1.0 / n
            weights = weights / weights.sum()
        gmm = GmmModel(weights, means, np.maximum(variances, var_floor), var_floor)
    if not converged:
        warnings.warn(f"EM did not converge in {max_iters} iterations", GmmWarning, stacklevel=2)
    return GmmModel(gmm.weights, gmm.means, gmm.variances, var_floor, tuple(history))


def fisher_vector(features, gmm: GmmModel) -> np.ndarray:
    """Unnormalised Fisher vector [G_mu (K*d); G_sigma (K*d)]."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyFeatureSet("cannot encode an empty feature set")
    if x.shape[1] != gmm.dim:
        raise DimMismatch(f"feature dim {x.shape[1]} != GMM dim {gmm.dim}")
    return fisher_from_stats(*sufficient_stats(x, gmm), gmm)


def sufficient_stats(x, gmm: GmmModel):
    """Posterior-weighted centred moments (N, S0, S1c, S2c) for one feature block."""
    gamma = posteriors(x, gmm)
    s0 = gamma.sum(axis=0)
    gx = gamma.T @ x
    gxx = gamma.T @ (x * x)
    mu = gmm.means
    s1 = gx - mu * s0[:, None]
    s2 = gxx - 2.0 * mu * gx + mu * mu * s0[:, None]
    return x.shape[0], s0, s1, s2


def fisher_from_stats(n, s0, s1, s2, gmm: GmmModel) -> np.ndarray:
    sigma = np.sqrt(gmm.variances)
    g_mu = s1 / sigma / (n * np.sqrt(gmm.weights))[:, None]
    g_sig = (s2 / gmm.variances - s0[:, None]) / (n * np.sqrt(2.0 * gmm.weights))[:, None]
    return np.concatenate([g_mu.ravel(), g_sig.ravel()])


def normalize_fv(v, power_alpha: float = 0.5) -> np.ndarray:
    """Signed power normalisation followed by L2 normalisation."""
    v = np.asarray(v, dtype=np.float64)
    out = np.sign(v) * np.abs(v) ** power_alpha
    norm = np.linalg.norm(out)
    return out / norm if norm > 0 else out


@dataclass(frozen=True, eq=False)
class FisherEncoder:
    reducer: WhiteningTransform
    gmm: GmmModel
    power_alpha: float = 0.5

    def __post_init__(self):
        if self.reducer.out_dim != self.gmm.dim:
            raise DimMismatch("reducer output dim must match the GMM dimension")

    @property
    def out_dim(self) -> int:
        return 2 * self.gmm.K * self.gmm.dim

    def encode(self, features, chunk: int = 50_000) -> np.ndarray:
        """Reduce -> Fisher vector -> power/L2 normalisation for one feature set."""
        features = np.asarray(features)
        if features.ndim != 2 or features.shape[0] == 0:
            raise EmptyFeatureSet("cannot encode an empty feature set")
        if features.shape[1] != self.reducer.in_dim:
            raise DimMismatch(f"feature dim {features.shape[1]} != {self.reducer.in_dim}")
        n = 0
        s0 = s1 = s2 = 0.0
        for s in range(0, features.shape[0], chunk):
            x = pca_whiten_apply(self.reducer, np.asarray(features[s:s + chunk], np.float64).T).T
            cn, c0, c1, c2 = sufficient_stats(x, self.gmm)
            n, s0, s1, s2 = n + cn, s0 + c0, s1 + c1, s2 + c2
        return normalize_fv(fisher_from_stats(n, s0, s1, s2, self.gmm), self.power_alpha)


@dataclass(frozen=True, eq=False)
class VideoRepresentation:
    vector: np.ndarray
    set_layout: tuple  # ((key, offset, length), ...)


def encode_video(sets, encoders) -> VideoRepresentation:
    """Encode every configured set, concatenate in encoder order, L2-normalise.

    ``sets`` maps set key -> raw local features; ``encoders`` is an ordered
    mapping set key -> FisherEncoder and fixes the layout.
    """
    parts, layout, offset = [], [], 0
    for key, enc in encoders.items():
        if key not in sets:
            raise MissingSet(f"feature set {key!r} missing")
        fv = enc.encode(sets[key])
        parts.append(fv)
        layout.append((key, offset, fv.size))
        offset += fv.size
    v = np.concatenate(parts) if parts else np.zeros(0)
    norm = np.linalg.norm(v)
    if norm > 0:
        v = v / norm
    return VideoRepresentation(v, tuple(layout))


def to_bytes(encoders, meta=None) -> bytes:
    """Serialise an ordered {set key: FisherEncoder} mapping."""
    encs = list(encoders.values())
    k, d = (encs[0].gmm.K, encs[0].gmm.dim) if encs else (0, 0)
    parts = [SFE_MAGIC, binio.u32(len(encs), k, d)]
    for e in encs:
        if (e.gmm.K, e.gmm.dim) != (k, d):
            raise DimMismatch("all sets must share K and d")
        parts += [binio.u32(e.reducer.in_dim), binio.f64(e.reducer.mean),
                  binio.f64(e.reducer.projection), binio.f64(e.gmm.weights),
                  binio.f64(e.gmm.means), binio.f64(e.gmm.variances)]
    m = dict(meta or {})
    m["sets"] = [str(key) for key in encoders]
    m["power_alpha"] = [e.power_alpha for e in encs]
    m["var_floor"] = [e.gmm.var_floor for e in encs]
    m["eigen_floor"] = [e.reducer.eigen_floor for e in encs]
    parts.append(binio.dumps_meta(m))
    return b"".join(parts)


def from_bytes(data: bytes):
    """Returns (ordered {key: FisherEncoder}, metadata dict)."""
    body, meta = binio.split_meta(data)
    meta = dict(meta or {})
    rd = binio.Reader(body, SFE_MAGIC, "encoder.sfe")
    n_sets, k, d = rd.u32(3)
    keys = meta.pop("sets", [f"set{i}" for i in range(n_sets)])
    alphas = meta.pop("power_alpha", [0.5] * n_sets)
    floors = meta.pop("var_floor", [0.0] * n_sets)
    eig_floors = meta.pop("eigen_floor", [0.0] * n_sets)
    out = {}
    for i in range(n_sets):
        in_dim = rd.u32()
        mean = rd.f64((in_dim,))
        proj = rd.f64((d, in_dim))
        gmm = GmmModel(rd.f64((k,)), rd.f64((k, d)), rd.f64((k, d)), floors[i])
        out[keys[i]] = FisherEncoder(WhiteningTransform(mean, proj, d, eig_floors[i]), gmm, alphas[i])
    rd.done()
    return out, meta


def save(encoders, path, meta=None):
    Path(path).write_bytes(to_bytes(encoders, meta))


def load(path):
    return from_bytes(Path(path).read_bytes())
