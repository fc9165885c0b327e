"""Pipeline configuration: every tunable with its default, JSON round-trip."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields

from .cube_sampling import CubeSpec
from .local_features import PoolSpec

SMALL_SCALES = (2.0, 0.5 ** -0.5, 1.0, 0.5 ** 0.5, 0.5)
LARGE_SCALES = (1.0, 0.5 ** 0.5, 0.5, 0.5 ** 1.5, 0.25)

# values that differ between low-resolution (50x50) and full-resolution data
PRESETS = {
    "small": {"pool_size": 2, "h_p": 6, "w_p": 6, "l_p": 9, "scales": SMALL_SCALES},
    "large": {"pool_size": 4, "h_p": 8, "w_p": 8, "l_p": 15, "scales": LARGE_SCALES},
}

HELP = {
    "h_s": "cube height (px)", "w_s": "cube width (px)", "l_s": "cube length (frames)",
    "d_s": "elemental cube length (frames)", "m": "whitened state dimension",
    "k": "nearest neighbours in the similarity graph",
    "r": "heat-kernel width; null means m/2", "lam": "manifold regularisation weight",
    "n_filters": "filters kept", "n_drop": "leading noisy solutions discarded",
    "group_size": "filters per group", "activation": "linear|relu|abs|square",
    "conv_stride": "convolution stride", "pool_size": "max-pooling window",
    "h_p": "local volume height", "w_p": "local volume width", "l_p": "local volume length",
    "s_s": "spatial stride of local volumes", "s_t": "temporal stride of local volumes",
    "scales": "spatial scales, comma separated", "max_frames": "frames kept per video",
    "K": "GMM components", "reduce_dim": "PCA dimension before encoding",
    "gmm_subsample": "local features sampled per set for PCA+GMM",
    "gmm_max_iters": "EM iteration cap", "gmm_tol": "EM relative tolerance",
    "power_alpha": "Fisher-vector power normalisation exponent", "C": "SVM trade-off",
    "svm_tol": "SVM dual tolerance", "seed": "master seed",
    "transition_budget": "max transitions used for learning", "n_cubes": "cubes sampled",
    "n_filter_videos": "videos cubes are drawn from", "method": "mrsfa|sfa",
    "ridge": "relative ridge on the constraint matrix", "channels": "af,vf subsets used",
}


@dataclass
class PipelineConfig:
    h_s: int = 7
    w_s: int = 7
    l_s: int = 15
    d_s: int = 6
    m: int = 64
    k: int = 5
    r: float | None = None
    lam: float = 0.1
    n_filters: int = 24
    n_drop: int = 1
    group_size: int = 8
    activation: str = "abs"
    conv_stride: int = 1
    pool_size: int = 2
    h_p: int = 6
    w_p: int = 6
    l_p: int = 9
    s_s: int = 1
    s_t: int = 3
    scales: tuple = SMALL_SCALES
    max_frames: int = 256
    K: int = 16
    reduce_dim: int = 48
    gmm_subsample: int = 16000
    gmm_max_iters: int = 100
    gmm_tol: float = 1e-6
    power_alpha: float = 0.5
    C: float = 1.0
    svm_tol: float = 1e-4
    seed: int = 0
    transition_budget: int = 100_000
    n_cubes: int = 100_000
    n_filter_videos: int = 100
    method: str = "mrsfa"
    ridge: float = 1e-8
    channels: tuple = ("af", "vf")

    def __post_init__(self):
        self.scales = tuple(float(s) for s in self.scales)
        self.channels = tuple(self.channels)
        if self.method not in ("mrsfa", "sfa"):
            raise ValueError(f"method must be mrsfa or sfa, got {self.method!r}")
        if not set(self.channels) <= {"af", "vf"} or not self.channels:
            raise ValueError(f"channels must be a nonempty subset of af, vf: {self.channels}")

    @property
    def cube(self) -> CubeSpec:
        return CubeSpec(self.h_s, self.w_s, self.l_s, self.d_s)

    @property
    def pool(self) -> PoolSpec:
        return PoolSpec(self.h_p, self.w_p, self.l_p, self.s_s, self.s_t)

    @property
    def r_eff(self) -> float:
        return float(self.m) / 2.0 if self.r is None else float(self.r)

    @property
    def n_groups(self) -> int:
        return -(-self.n_filters // self.group_size)

    def set_keys(self):
        keys = []
        for ch in self.channels:
            keys += [f"{ch.upper()}{g + 1}" for g in range(self.n_groups)]
        return keys

    @property
    def representation_dim(self) -> int:
        return len(self.set_keys()) * 2 * self.K * self.reduce_dim

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def preset(cls, name: str, **kw) -> "PipelineConfig":
        return cls(**{**PRESETS[name], **kw})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scales"] = list(self.scales)
        d["channels"] = list(self.channels)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        return cls.from_dict(json.loads(text))
