"""Slow feature analysis and its manifold-regularized variant.

Both learners operate on temporal transitions ``(x_i, x_{i+1})`` of
whitened states. Standard SFA diagonalises ``Xd Xd^T``; the regularized
learner builds a kNN similarity graph over the initial states and solves

    (Xd L Xd^T) u = lam (Xd D Xd^T) u,   L = I + lambda (D - S)

keeping the eigenvectors with the smallest eigenvalues.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .errors import AllDropped, AllZeroVariations, DimMismatch, TooFewSamples
from .linalg import WhiteningTransform, gen_sym_eig, pca_whiten_apply, sym_eig

_BLOCK_ELEMS = 20_000_000  # distance-table entries held at once


@dataclass(frozen=True, eq=False)
class TransitionSet:
    initial_states: np.ndarray  # (m, t')
    variations: np.ndarray      # (m, t'), x_i - x_{i+1}

    def __post_init__(self):
        if self.initial_states.shape != self.variations.shape:
            raise DimMismatch("initial states and variations differ in shape")

    @property
    def dim(self) -> int:
        return self.variations.shape[0]

    def __len__(self):
        return self.variations.shape[1]


@dataclass(frozen=True, eq=False)
class SimilarityGraph:
    S: sp.csr_matrix
    degree: np.ndarray
    k: int
    r: float

    @property
    def dim(self) -> int:
        return self.S.shape[0]


@dataclass(frozen=True, eq=False)
class SlowProjection:
    U: np.ndarray            # (m, q_raw), unit-norm columns
    eigenvalues: np.ndarray  # ascending
    n_dropped: int = 0

    @property
    def q(self) -> int:
        return self.U.shape[1]


def transitions_from_states(states) -> TransitionSet:
    """``states`` is (n_seq, l_n, m) whitened; transitions stay inside a sequence."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 3 or states.shape[1] < 2:
        raise DimMismatch("need (n_sequences, length>=2, dim) states")
    init = states[:, :-1, :].reshape(-1, states.shape[2]).T
    var = (states[:, :-1, :] - states[:, 1:, :]).reshape(-1, states.shape[2]).T
    return TransitionSet(np.ascontiguousarray(init), np.ascontiguousarray(var))


def build_transitions(sequences, whitener: WhiteningTransform) -> TransitionSet:
    """Whiten every cube sequence and collect its within-sequence transitions."""
    inits, vars_ = [], []
    for seq in sequences:
        states = np.asarray(getattr(seq, "states", seq), dtype=np.float64)
        if states.shape[0] != whitener.in_dim:
            raise DimMismatch(f"state dim {states.shape[0]} != whitener in_dim {whitener.in_dim}")
        if states.shape[1] < 2:
            raise DimMismatch("every sequence needs at least two states")
        x = pca_whiten_apply(whitener, states)
        inits.append(x[:, :-1])
        vars_.append(x[:, :-1] - x[:, 1:])
    if not inits:
        raise DimMismatch("no sequences given")
    return TransitionSet(np.hstack(inits), np.hstack(vars_))


def subsample_transitions(ts: TransitionSet, budget: int, seed: int) -> TransitionSet:
    """Keep at most ``budget`` transitions, drawn uniformly without replacement."""
    n = len(ts)
    if budget is None or n <= budget:
        return ts
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(n, size=budget, replace=False))
    return TransitionSet(ts.initial_states[:, keep], ts.variations[:, keep])


def _select_k_smallest(d, k):
    """Boolean mask of the k smallest entries per row; ties go to lower column."""
    kth = np.partition(d, k - 1, axis=1)[:, k - 1:k]
    mask = d <= kth
    for i in np.flatnonzero(mask.sum(axis=1) > k):
        less = d[i] < kth[i]
        need = k - int(less.sum())
        mask[i] = less
        mask[i, np.flatnonzero(d[i] == kth[i])[:need]] = True
    return mask


def knn_similarity(states, k: int = 5, r: float = 32.0) -> SimilarityGraph:
    """Heat-kernel weights on the symmetrised (union) exact kNN graph.

    ``states`` holds one sample per column. Self is never a neighbour.
    """
    x = np.asarray(states, dtype=np.float64)
    m, n = x.shape
    if k < 1:
        raise ValueError("k must be positive")
    if not r > 0:
        raise ValueError("r must be positive")
    if n <= k:
        raise TooFewSamples(f"need more than k={k} samples, got {n}")
    xt = np.ascontiguousarray(x.T)
    sq = np.einsum("ij,ij->i", xt, xt)
    block = max(1, _BLOCK_ELEMS // n)
    rows, cols = [], []
    for start in range(0, n, block):
        stop = min(n, start + block)
        d = sq[start:stop, None] + sq[None, :] - 2.0 * (xt[start:stop] @ xt.T)
        np.maximum(d, 0.0, out=d)
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        i, j = np.nonzero(_select_k_smallest(d, k))
        rows.append(i + start)
        cols.append(j)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    # exact pair distances from differences; identical for (i,j) and (j,i)
    diff = xt[rows] - xt[cols]
    w = np.exp(-np.einsum("ij,ij->i", diff, diff) / r)
    directed = sp.csr_matrix((w, (rows, cols)), shape=(n, n))
    s = directed.maximum(directed.T).tocsr()
    s.sort_indices()
    degree = np.asarray(s.sum(axis=1)).ravel()
    return SimilarityGraph(s, degree, k, float(r))


def laplacian_operator(graph: SimilarityGraph, lam: float) -> sp.csr_matrix:
    """``L = I + lambda (D - S)`` as a sparse matrix."""
    n = graph.dim
    ident = sp.identity(n, format="csr")
    if lam == 0:
        return ident
    return (ident + lam * (sp.diags(graph.degree) - graph.S)).tocsr()


def mrsfa_matrices(transitions: TransitionSet, graph: SimilarityGraph, lam: float):
    """Return ``(A, B) = (Xd L Xd^T, Xd D Xd^T)``."""
    xd = transitions.variations
    if graph.dim != xd.shape[1]:
        raise DimMismatch(f"graph has {graph.dim} nodes but there are {xd.shape[1]} transitions")
    lap = laplacian_operator(graph, lam)
    a = xd @ np.asarray(lap @ xd.T)
    b = (xd * graph.degree) @ xd.T
    return 0.5 * (a + a.T), 0.5 * (b + b.T)


def _check_variations(xd):
    if not np.any(xd):
        raise AllZeroVariations("all temporal variations are zero")


def fit_mrsfa(transitions: TransitionSet, graph: SimilarityGraph, lam: float = 0.1,
              q: int | None = None, ridge: float = 1e-8) -> SlowProjection:
    """Solve the regularized generalized eigenproblem; keep the q slowest directions."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    _check_variations(transitions.variations)
    a, b = mrsfa_matrices(transitions, graph, lam)
    sol = gen_sym_eig(a, b, ridge)
    q = sol.eigenvectors.shape[1] if q is None else q
    return SlowProjection(sol.eigenvectors[:, :q].copy(), sol.eigenvalues[:q].copy())


def fit_sfa(transitions: TransitionSet, q: int | None = None) -> SlowProjection:
    """Standard SFA: eigenvectors of ``Xd Xd^T`` with the smallest eigenvalues."""
    xd = transitions.variations
    _check_variations(xd)
    if xd.shape[1] < xd.shape[0]:
        warnings.warn(f"{xd.shape[1]} transitions for {xd.shape[0]} dimensions", stacklevel=2)
    sol = sym_eig(xd @ xd.T)
    q = sol.eigenvectors.shape[1] if q is None else q
    return SlowProjection(sol.eigenvectors[:, :q].copy(), sol.eigenvalues[:q].copy())


def drop_noisy(p: SlowProjection, n_drop: int) -> SlowProjection:
    """Discard the ``n_drop`` leading (smallest-eigenvalue) solutions."""
    if n_drop < 0:
        raise ValueError("n_drop must be nonnegative")
    if n_drop >= p.q:
        raise AllDropped(f"cannot drop {n_drop} of {p.q} solutions")
    if n_drop == 0:
        return p
    return replace(p, U=p.U[:, n_drop:].copy(), eigenvalues=p.eigenvalues[n_drop:].copy(),
                   n_dropped=p.n_dropped + n_drop)


def trace_ratio(u, a, b) -> float:
    u = np.asarray(u)
    return float(np.trace(u.T @ a @ u) / np.trace(u.T @ b @ u))
