"""Per-frame filter responses, activation, max pooling, appearance/variation maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FilterLargerThanFrame, TooFewFrames

RAW, POOLED, APPEARANCE, VARIATION = "raw", "pooled", "appearance", "variation"
ACTIVATIONS = ("linear", "relu", "abs", "square")
_CHUNK_ELEMS = 8_000_000


@dataclass(frozen=True, eq=False)
class FeatureMapStack:
    maps: np.ndarray  # (frames, filters, H, W)
    kind: str
    pool_size: int = 1

    @property
    def frame_count(self) -> int:
        return self.maps.shape[0]

    @property
    def n_maps(self) -> int:
        return self.maps.shape[1]

    def select(self, filters) -> "FeatureMapStack":
        return FeatureMapStack(self.maps[:, list(filters)], self.kind, self.pool_size)


def conv_output_size(n: int, k: int, stride: int = 1) -> int:
    return (n - k) // stride + 1


def convolve_frame(frame, filt, bias: float = 0.0, stride: int = 1) -> np.ndarray:
    """Valid 2D cross-correlation (no kernel flip) plus bias."""
    out = convolve_frames(np.asarray(frame)[None], np.asarray(filt)[None],
                          np.array([bias], dtype=np.float64), stride)
    return out[0, 0]


def convolve_frames(frames, filters, biases, stride: int = 1) -> np.ndarray:
    """Correlate every frame with every filter.

    frames (n, H, W), filters (q, h, w), biases (q,) -> (n, q, H', W').
    Implemented as a patch-matrix product.
    """
    frames = np.asarray(frames, dtype=np.float64)
    filters = np.asarray(filters, dtype=np.float64)
    n, hh, ww = frames.shape
    q, fh, fw = filters.shape
    if fh > hh or fw > ww:
        raise FilterLargerThanFrame(f"filter {fh}x{fw} larger than frame {hh}x{ww}")
    if stride < 1:
        raise ValueError("stride must be positive")
    oh, ow = conv_output_size(hh, fh, stride), conv_output_size(ww, fw, stride)
    kernel = filters.reshape(q, fh * fw).T
    out = np.empty((n, q, oh, ow))
    per_frame = oh * ow * fh * fw
    step = max(1, _CHUNK_ELEMS // max(per_frame, 1))
    for s in range(0, n, step):
        win = sliding_window_view(frames[s:s + step], (fh, fw), axis=(1, 2))[:, ::stride, ::stride]
        patches = win.reshape(-1, fh * fw)
        resp = (patches @ kernel).reshape(win.shape[0], oh, ow, q)
        out[s:s + step] = np.moveaxis(resp, 3, 1)
    out += np.asarray(biases, dtype=np.float64)[None, :, None, None]
    return out


def activate(m, fn: str = "abs") -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if fn == "abs":
        return np.abs(m)
    if fn == "relu":
        return np.maximum(m, 0.0)
    if fn == "linear":
        return m.copy()
    if fn == "square":
        return m * m
    raise ValueError(f"unknown activation {fn!r}; choose from {ACTIVATIONS}")


def pooled_size(n: int, s: int) -> int:
    return -(-n // s)


def max_pool(m, s: int) -> np.ndarray:
    """Non-overlapping s x s max over the last two axes.

    Right/bottom windows that run off the map are truncated, not dropped.
    """
    m = np.asarray(m, dtype=np.float64)
    if s == 1:
        return m.copy()
    h, w = m.shape[-2:]
    ph, pw = pooled_size(h, s), pooled_size(w, s)
    pad = [(0, 0)] * (m.ndim - 2) + [(0, ph * s - h), (0, pw * s - w)]
    padded = np.pad(m, pad, constant_values=-np.inf)
    shaped = padded.reshape(m.shape[:-2] + (ph, s, pw, s))
    return shaped.max(axis=(-3, -1))


def pooled_maps(frames, filters, biases, stride: int = 1, activation: str = "abs",
                pool_size: int = 1) -> FeatureMapStack:
    """Convolution -> activation -> spatial max pooling for a whole video."""
    frames = np.asarray(frames, dtype=np.float64)
    out = None
    # chunk over frames to bound the raw-response memory
    step = max(1, _CHUNK_ELEMS // max(1, frames.shape[1] * frames.shape[2] * len(filters)))
    for s in range(0, frames.shape[0], step):
        m = convolve_frames(frames[s:s + step], filters, biases, stride)
        p = max_pool(activate(m, activation), pool_size)
        if out is None:
            out = np.empty((frames.shape[0],) + p.shape[1:])
        out[s:s + step] = p
    return FeatureMapStack(out, POOLED, pool_size)


def appearance_maps(pooled: FeatureMapStack) -> FeatureMapStack:
    """Elementwise absolute value of the pooled responses."""
    return FeatureMapStack(np.abs(pooled.maps), APPEARANCE, pooled.pool_size)


def variation_maps(pooled: FeatureMapStack) -> FeatureMapStack:
    """Absolute difference of consecutive pooled frames; one frame fewer."""
    if pooled.frame_count < 2:
        raise TooFewFrames("variation maps need at least two frames")
    return FeatureMapStack(np.abs(pooled.maps[:-1] - pooled.maps[1:]), VARIATION,
                           pooled.pool_size)
