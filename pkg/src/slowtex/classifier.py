"""One-vs-all linear SVM (dual coordinate descent) and evaluation protocols."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import binio
from .errors import (DimMismatch, EmptyData, InsufficientPerClass, SingleClass,
                     TooFewVideos)

SSM_MAGIC = b"SSM1"


@dataclass(frozen=True, eq=False)
class LinearOvaSvm:
    class_labels: tuple
    weights: np.ndarray  # (n_classes, dim)
    bias: np.ndarray     # (n_classes,)
    C: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def decision_values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimMismatch(f"representation dim {x.shape[-1]} != model dim {self.dim}")
        return x @ self.weights.T + self.bias


def _dual_cd(xa, y, C, tol, max_epochs, rng):
    """L1-loss linear SVM dual coordinate descent on bias-augmented rows.

    Returns (w, epochs, converged, dual objective per epoch). The dual
    objective 0.5*|w|^2 - sum(alpha) never increases.
    """
    n, d = xa.shape
    qii = np.einsum("ij,ij->i", xa, xa)
    alpha = np.zeros(n)
    w = np.zeros(d)
    history = []
    converged = False
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        pg_max, pg_min = -np.inf, np.inf
        for i in rng.permutation(n):
            if qii[i] == 0.0:
                continue
            g = y[i] * (w @ xa[i]) - 1.0
            a = alpha[i]
            if a == 0.0:
                pg = min(g, 0.0)
            elif a == C:
                pg = max(g, 0.0)
            else:
                pg = g
            pg_max = max(pg_max, pg)
            pg_min = min(pg_min, pg)
            if pg != 0.0:
                new = min(max(a - g / qii[i], 0.0), C)
                w += (new - a) * y[i] * xa[i]
                alpha[i] = new
        history.append(0.5 * float(w @ w) - float(alpha.sum()))
        if pg_max - pg_min < tol:
            converged = True
            break
    return w, epoch, converged, history


def train_svm(reps, labels, C: float = 1.0, seed: int = 0, tol: float = 1e-4,
              max_epochs: int = 2000) -> LinearOvaSvm:
    """Train one binary hinge-loss SVM per class (that class vs the rest)."""
    x = np.asarray([getattr(r, "vector", r) for r in reps], dtype=np.float64)
    labels = list(labels)
    if x.size == 0 or len(labels) == 0:
        raise EmptyData("no training data")
    if len(labels) != x.shape[0]:
        raise DimMismatch("one label per representation required")
    classes = tuple(sorted(set(labels)))
    if len(classes) < 2:
        raise SingleClass("need at least two classes")
    xa = np.hstack([x, np.ones((x.shape[0], 1))])
    lab = np.array(labels, dtype=object)
    weights = np.empty((len(classes), x.shape[1]))
    bias = np.empty(len(classes))
    info = []
    for ci, c in enumerate(classes):
        y = np.where(lab == c, 1.0, -1.0)
        rng = np.random.default_rng([seed, ci])
        w, epochs, ok, hist = _dual_cd(xa, y, C, tol, max_epochs, rng)
        weights[ci], bias[ci] = w[:-1], w[-1]
        margins = y * (xa @ w)
        info.append({"class": str(c), "epochs": epochs, "converged": ok,
                     "train_errors": int(np.sum(margins <= 0)),
                     "dual_objective": hist})
    return LinearOvaSvm(classes, weights, bias, float(C),
                        {"tol": tol, "seed": seed, "per_class": info})


def predict(model: LinearOvaSvm, rep):
    """(label, decision values); ties go to the earliest class."""
    dv = model.decision_values(getattr(rep, "vector", rep))
    return model.class_labels[int(np.argmax(dv))], dv


def predict_many(model: LinearOvaSvm, reps) -> list:
    x = np.asarray([getattr(r, "vector", r) for r in reps], dtype=np.float64)
    dv = model.decision_values(x)
    return [model.class_labels[i] for i in np.argmax(dv, axis=1)]


def to_bytes(model: LinearOvaSvm, meta=None) -> bytes:
    parts = [SSM_MAGIC, binio.u32(len(model.class_labels), model.dim)]
    parts += [binio.text(str(c)) for c in model.class_labels]
    parts += [binio.f64(model.weights), binio.f64(model.bias)]
    m = {"C": model.C, "tol": model.meta.get("tol"), "seed": model.meta.get("seed")}
    m.update(meta or {})
    parts.append(binio.dumps_meta(m))
    return b"".join(parts)


def from_bytes(data: bytes) -> LinearOvaSvm:
    body, meta = binio.split_meta(data)
    meta = dict(meta or {})
    rd = binio.Reader(body, SSM_MAGIC, "svm.ssm")
    n, d = rd.u32(2)
    labels = tuple(rd.text() for _ in range(n))
    w = rd.f64((n, d))
    b = rd.f64((n,))
    rd.done()
    return LinearOvaSvm(labels, w, b, float(meta.pop("C", 1.0)), meta)


def save(model: LinearOvaSvm, path, meta=None):
    Path(path).write_bytes(to_bytes(model, meta))


def load(path) -> LinearOvaSvm:
    return from_bytes(Path(path).read_bytes())


# --- evaluation protocols -------------------------------------------------

@dataclass
class EvalReport:
    protocol: str
    per_split: list
    confusion: np.ndarray
    class_labels: list
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_split)) if self.per_split else float("nan")

    def to_dict(self) -> dict:
        d = {"protocol": self.protocol, "seed": self.seed,
             "per_split": [float(a) for a in self.per_split], "mean": self.mean,
             "class_labels": [str(c) for c in self.class_labels],
             "confusion": [int(v) for v in np.asarray(self.confusion).ravel()]}
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        labels = d["class_labels"]
        conf = np.array(d["confusion"], dtype=np.int64).reshape(len(labels), len(labels))
        core = {"protocol", "seed", "per_split", "mean", "class_labels", "confusion"}
        return cls(d["protocol"], list(d["per_split"]), conf, labels, d.get("seed", 0),
                   {k: v for k, v in d.items() if k not in core})


def _by_class(labels):
    groups = {}
    for i, c in enumerate(labels):
        groups.setdefault(c, []).append(i)
    return dict(sorted(groups.items()))


def loo_splits(labels):
    """Leave-one-video-out folds: (train indices, [held-out index])."""
    for c, idx in _by_class(labels).items():
        if len(idx) < 2:
            raise TooFewVideos(f"class {c!r} has {len(idx)} video(s); LOO needs 2")
    n = len(labels)
    return [(np.array([j for j in range(n) if j != i]), np.array([i])) for i in range(n)]


def random_splits(labels, mode: str = "half", n_train: int | None = None,
                  n_splits: int = 20, seed: int = 0):
    """Stratified random train/test splits.

    ``half``: floor(size/2) training videos per class; ``fixed-count``:
    ``n_train`` per class. Every class keeps at least one test video.
    """
    groups = _by_class(labels)
    rng = np.random.default_rng(seed)
    splits = []
    for _ in range(n_splits):
        train, test = [], []
        for c, idx in groups.items():
            k = len(idx) // 2 if mode == "half" else n_train
            if mode not in ("half", "fixed-count"):
                raise ValueError(f"unknown split mode {mode!r}")
            if k is None or k < 1 or k >= len(idx):
                raise InsufficientPerClass(
                    f"class {c!r} has {len(idx)} videos; cannot train on {k} and test on the rest")
            perm = rng.permutation(len(idx))
            train += [idx[j] for j in perm[:k]]
            test += [idx[j] for j in perm[k:]]
        splits.append((np.sort(train), np.sort(test)))
    return splits


def run_protocol(protocol: str, splits, labels, fit_predict, seed: int = 0) -> EvalReport:
    """Evaluate ``fit_predict(train_idx, test_idx) -> predicted labels`` on each split."""
    classes = sorted(set(labels))
    pos = {c: i for i, c in enumerate(classes)}
    conf = np.zeros((len(classes), len(classes)), dtype=np.int64)
    accs = []
    for train, test in splits:
        pred = fit_predict(train, test)
        truth = [labels[i] for i in test]
        for t, p in zip(truth, pred):
            conf[pos[t], pos[p]] += 1
        accs.append(float(np.mean([t == p for t, p in zip(truth, pred)])))
    return EvalReport(protocol, accs, conf, classes, seed)
