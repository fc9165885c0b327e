"""End-to-end orchestration: filter learning, feature extraction, encoding, evaluation."""
from __future__ import annotations

import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .classifier import (EvalReport, loo_splits, predict_many, random_splits, run_protocol,
                         train_svm)
from .config import PipelineConfig
from .cube_sampling import reformat_batch, sample_cubes
from .errors import VolumeLargerThanMaps
from .feature_maps import appearance_maps, pooled_maps, variation_maps
from .filter_bank import FilterBank, compose_filters, group_filters
from .fisher_encoding import FisherEncoder, encode_video, fit_gmm
from .linalg import covariance_from_moments, pca_whiten_apply, whitening_from_covariance
from .local_features import fit_reducer, grid_counts, pool_volume
from .mrsfa import (TransitionSet, drop_noisy, fit_mrsfa, fit_sfa, knn_similarity)
from .video_io import GraySequence, rescale

log = logging.getLogger(__name__)

_STATE_CHUNK = 4096  # cubes reformatted at once


def _truncate(video: GraySequence, max_frames: int) -> GraySequence:
    if video.length <= max_frames:
        return video
    return GraySequence(video.frames[:max_frames], video.source_id)


# --- filter learning ------------------------------------------------------

def learn_filters(videos, cfg: PipelineConfig, provenance=None) -> FilterBank:
    """Cubes -> elemental sequences -> PCA whitening -> (MR-)SFA -> filter bank."""
    spec = cfg.cube
    spec.check_learnable()
    videos = [_truncate(v, cfg.max_frames) for v in videos]
    cubes = sample_cubes(videos, cfg.n_cubes, spec, cfg.seed)
    n = cubes.shape[0]

    # whitening statistics over every elemental cube
    total = np.zeros(spec.state_dim)
    outer = np.zeros((spec.state_dim, spec.state_dim))
    for s in range(0, n, _STATE_CHUNK):
        st = reformat_batch(cubes[s:s + _STATE_CHUNK], spec).reshape(-1, spec.state_dim)
        total += st.sum(axis=0)
        outer += st.T @ st
    mean, cov = covariance_from_moments(n * spec.l_n, total, outer)
    whitener = whitening_from_covariance(mean, cov, cfg.m)

    # transitions, capped by the budget
    per_cube = spec.l_n - 1
    n_trans = n * per_cube
    if n_trans > cfg.transition_budget:
        rng = np.random.default_rng([cfg.seed, 1])
        chosen = np.sort(rng.choice(n_trans, size=cfg.transition_budget, replace=False))
    else:
        chosen = np.arange(n_trans)
    cube_idx, step = np.divmod(chosen, per_cube)
    init = np.empty((whitener.out_dim, chosen.size))
    var = np.empty_like(init)
    for s in range(0, chosen.size, _STATE_CHUNK):
        ci, ti = cube_idx[s:s + _STATE_CHUNK], step[s:s + _STATE_CHUNK]
        uniq, inv = np.unique(ci, return_inverse=True)
        st = reformat_batch(cubes[uniq], spec)  # (u, l_n, dim)
        x0 = pca_whiten_apply(whitener, st[inv, ti].T)
        x1 = pca_whiten_apply(whitener, st[inv, ti + 1].T)
        init[:, s:s + ci.size] = x0
        var[:, s:s + ci.size] = x0 - x1
    del cubes
    trans = TransitionSet(init, var)

    q_raw = cfg.n_filters + cfg.n_drop
    t0 = time.perf_counter()
    if cfg.method == "mrsfa":
        graph = knn_similarity(trans.initial_states, cfg.k, cfg.r_eff)
        proj = fit_mrsfa(trans, graph, cfg.lam, q_raw, cfg.ridge)
    else:
        proj = fit_sfa(trans, q_raw)
    log.info("%s fit on %d transitions in %.1fs", cfg.method, len(trans), time.perf_counter() - t0)
    proj = drop_noisy(proj, cfg.n_drop)
    meta = {"config": cfg.to_dict()}
    meta.update(provenance or {})
    fb = compose_filters(whitener, proj, spec, cfg.group_size, meta)
    return group_filters(fb, cfg.group_size)


# --- feature extraction ---------------------------------------------------

def _scale_fits(video, scale, cfg, fb):
    h = max(1, int(np.floor(scale * video.height + 0.5)))
    w = max(1, int(np.floor(scale * video.width + 0.5)))
    if h < fb.spec.h_s or w < fb.spec.w_s:
        return False
    ch = (h - fb.spec.h_s) // cfg.conv_stride + 1
    cw = (w - fb.spec.w_s) // cfg.conv_stride + 1
    ph, pw = -(-ch // cfg.pool_size), -(-cw // cfg.pool_size)
    ny, nx, nt = grid_counts(ph, pw, video.length - 1, cfg.pool)
    return ny * nx * nt > 0


def extract_features(video: GraySequence, fb: FilterBank, cfg: PipelineConfig,
                     dtype=np.float32) -> dict:
    """Local features per set key (AF1.., VF1..), merged over all scales."""
    video = _truncate(video, cfg.max_frames)
    slim, bias = fb.slim, fb.b
    out = {key: [] for key in cfg.set_keys()}
    used = 0
    for si, scale in enumerate(cfg.scales):
        if not _scale_fits(video, scale, cfg, fb):
            continue
        used += 1
        seq = rescale(video, scale)
        pooled = pooled_maps(seq.frames, slim, bias, cfg.conv_stride, cfg.activation,
                             cfg.pool_size)
        for g, members in enumerate(fb.groups):
            sub = pooled.select(members)
            for ch in cfg.channels:
                stack = appearance_maps(sub) if ch == "af" else variation_maps(sub)
                feats, _ = pool_volume(stack.maps, cfg.pool, si)
                out[f"{ch.upper()}{g + 1}"].append(feats.astype(dtype))
    if not used:
        raise VolumeLargerThanMaps(f"{video.source_id}: too small for every configured scale")
    return {k: np.concatenate(v) for k, v in out.items()}


def _cached(i, feats, cache_dir):
    d = Path(cache_dir) / f"video_{i:05d}"
    d.mkdir(parents=True, exist_ok=True)
    out = {}
    for key, arr in feats.items():
        np.save(d / f"{key}.npy", arr)
        out[key] = np.load(d / f"{key}.npy", mmap_mode="r")
    return out


def extract_all(videos, fb, cfg, threads: int = 1, cache_dir=None):
    """Features for every video; order and values independent of ``threads``.

    With ``cache_dir`` the features are written as .npy files and returned
    memory-mapped, which keeps multi-scale runs on large sets out of RAM.
    """
    t0 = time.perf_counter()

    def job(i):
        f = extract_features(videos[i], fb, cfg)
        return _cached(i, f, cache_dir) if cache_dir is not None else f

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            feats = list(pool.map(job, range(len(videos))))
    else:
        feats = [job(i) for i in range(len(videos))]
    dt = time.perf_counter() - t0
    frames = sum(min(v.length, cfg.max_frames) for v in videos)
    log.info("feature extraction: %d videos, %d frames, %.2f frames/s",
             len(videos), frames, frames / dt if dt > 0 else float("inf"))
    return feats


# --- encoding ---------------------------------------------------------------

def sample_training_features(feats, train_idx, key, count, seed):
    sizes = np.array([feats[i][key].shape[0] for i in train_idx])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(total, size=min(count, total), replace=False))
    vid = np.searchsorted(offsets, pick, side="right") - 1
    rows = []
    for v in np.unique(vid):
        rows.append(np.asarray(feats[train_idx[v]][key][pick[vid == v] - offsets[v]]))
    return np.concatenate(rows).astype(np.float64)


def fit_encoders(feats, train_idx, cfg: PipelineConfig, keys=None) -> dict:
    """PCA + GMM per set, fit on a seeded sample of training features only."""
    keys = cfg.set_keys() if keys is None else keys
    encoders = {}
    for si, key in enumerate(keys):
        seed = [cfg.seed, 2, si]
        x = sample_training_features(feats, list(train_idx), key, cfg.gmm_subsample, seed)
        reducer = fit_reducer(x, min(cfg.reduce_dim, x.shape[1]))
        xr = (reducer.projection @ (x - reducer.mean).T).T
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            gmm = fit_gmm(xr, cfg.K, seed=cfg.seed + si, max_iters=cfg.gmm_max_iters,
                          tol=cfg.gmm_tol)
        encoders[key] = FisherEncoder(reducer, gmm, cfg.power_alpha)
    return encoders


def encode_all(feats, encoders, idx=None, threads: int = 1) -> np.ndarray:
    idx = range(len(feats)) if idx is None else idx
    job = lambda i: encode_video(feats[i], encoders).vector  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return np.stack(list(pool.map(job, idx)))
    return np.stack([job(i) for i in idx])


def train_models(feats, labels, train_idx, cfg, threads: int = 1):
    encoders = fit_encoders(feats, train_idx, cfg)
    x = encode_all(feats, encoders, train_idx, threads)
    svm = train_svm(x, [labels[i] for i in train_idx], cfg.C, cfg.seed, cfg.svm_tol)
    return encoders, svm


# --- evaluation -----------------------------------------------------------

def evaluate_features(feats, labels, cfg: PipelineConfig, protocol: str = "half",
                      n_splits: int = 20, n_train: int | None = None,
                      threads: int = 1) -> EvalReport:
    """Run a protocol on precomputed features; encoders and SVM refit per split."""
    labels = list(labels)
    if protocol == "loo":
        splits = loo_splits(labels)
    else:
        splits = random_splits(labels, protocol, n_train, n_splits, cfg.seed)

    def fit_predict(train, test):
        encoders, svm = train_models(feats, labels, train, cfg, threads)
        return predict_many(svm, encode_all(feats, encoders, test, threads))

    report = run_protocol(protocol, splits, labels, fit_predict, cfg.seed)
    report.extra["channels"] = list(cfg.channels)
    report.extra["method"] = cfg.method
    report.extra["representation_dim"] = cfg.representation_dim
    return report


def eval_loo(videos, labels, fb, cfg, threads=1, cache_dir=None) -> EvalReport:
    feats = extract_all(videos, fb, cfg, threads, cache_dir)
    return evaluate_features(feats, labels, cfg, "loo", threads=threads)


def eval_splits(videos, labels, fb, cfg, mode="half", n_splits=20, n_train=None,
                threads=1, cache_dir=None) -> EvalReport:
    feats = extract_all(videos, fb, cfg, threads, cache_dir)
    return evaluate_features(feats, labels, cfg, mode, n_splits, n_train, threads)
