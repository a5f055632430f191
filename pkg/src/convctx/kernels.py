"""Acoustic similarity kernels: DTW, FastDTW, pooling, cosine, weighted fusion.

All kernels are pure functions. The dynamic-programming cores are numba-jitted
because retrieval runs one DTW per history utterance and has a hard latency
budget; first use per process pays a one-off JIT compile (cached on disk).

DTW minimizes (cost, path length) lexicographically, so among equal-cost
warping paths the shortest is reported. That makes path_length deterministic
and keeps the length-normalized similarity well defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from convctx.errors import ConfigurationError, KernelError
from convctx.records import SpeechEmbedding

DEFAULT_RADIUS = 1


@dataclass(frozen=True)
class DtwResult:
    """Cumulative frame distance along a warping path, and the path's length."""

    distance: float
    path_length: int


@dataclass(frozen=True)
class SpeechSimilarityWeights:
    """Fusion weights for frame-level vs utterance-level acoustic similarity."""

    w_frame: float = 0.5
    w_utt: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 <= self.w_frame <= 1.0 and 0.0 <= self.w_utt <= 1.0):
            raise ConfigurationError(f"weights must lie in [0,1], got {self}")
        if abs(self.w_frame + self.w_utt - 1.0) > 1e-9:
            raise ConfigurationError(f"weights must sum to 1, got {self}")

    @classmethod
    def from_frame_weight(cls, w_frame: float) -> "SpeechSimilarityWeights":
        return cls(w_frame, 1.0 - w_frame)


DEFAULT_WEIGHTS = SpeechSimilarityWeights()


# --------------------------------------------------------------------------
# numba DP cores
# --------------------------------------------------------------------------
# Predecessor codes: 0 = diagonal, 1 = from row above, 2 = from left, 3 = start.
# Ties on (cost, steps) resolve in that order, fixing the reported path.


@njit(cache=True)
def _cell_dist(a, b, i, j):
    acc = 0.0
    for k in range(a.shape[1]):
        d = a[i, k] - b[j, k]
        acc += d * d
    return math.sqrt(acc)


@njit(cache=True)
def _dtw_full(a, b):
    n = a.shape[0]
    m = b.shape[0]
    cost = np.empty((n, m), np.float64)
    steps = np.empty((n, m), np.int64)
    pred = np.empty((n, m), np.uint8)
    for i in range(n):
        for j in range(m):
            d = _cell_dist(a, b, i, j)
            if i == 0 and j == 0:
                cost[i, j] = d
                steps[i, j] = 1
                pred[i, j] = 3
                continue
            best_c = np.inf
            best_s = np.int64(0)
            best_p = np.uint8(3)
            if i > 0 and j > 0:
                best_c = cost[i - 1, j - 1]
                best_s = steps[i - 1, j - 1]
                best_p = 0
            if i > 0:
                c = cost[i - 1, j]
                s = steps[i - 1, j]
                if c < best_c or (c == best_c and s < best_s):
                    best_c, best_s, best_p = c, s, 1
            if j > 0:
                c = cost[i, j - 1]
                s = steps[i, j - 1]
                if c < best_c or (c == best_c and s < best_s):
                    best_c, best_s, best_p = c, s, 2
            cost[i, j] = best_c + d
            steps[i, j] = best_s + 1
            pred[i, j] = best_p
    length = steps[n - 1, m - 1]
    pi = np.empty(length, np.int64)
    pj = np.empty(length, np.int64)
    i = n - 1
    j = m - 1
    for t in range(length - 1, -1, -1):
        pi[t] = i
        pj[t] = j
        p = pred[i, j]
        if p == 0:
            i -= 1
            j -= 1
        elif p == 1:
            i -= 1
        elif p == 2:
            j -= 1
    return cost[n - 1, m - 1], length, pi, pj


@njit(cache=True)
def _dtw_band(a, b, lo, hi):
    # Band is a per-row inclusive column range [lo[i], hi[i]]; cells outside
    # are unreachable. Storage is offset by lo[i] into width-W rows.
    n = a.shape[0]
    m = b.shape[0]
    width = 0
    for i in range(n):
        w = hi[i] - lo[i] + 1
        if w > width:
            width = w
    cost = np.full((n, width), np.inf)
    steps = np.zeros((n, width), np.int64)
    pred = np.full((n, width), np.uint8(3))
    for i in range(n):
        for j in range(lo[i], hi[i] + 1):
            col = j - lo[i]
            d = _cell_dist(a, b, i, j)
            if i == 0 and j == 0:
                cost[i, col] = d
                steps[i, col] = 1
                pred[i, col] = 3
                continue
            best_c = np.inf
            best_s = np.int64(0)
            best_p = np.uint8(3)
            if i > 0 and j > 0 and lo[i - 1] <= j - 1 and j - 1 <= hi[i - 1]:
                c = cost[i - 1, j - 1 - lo[i - 1]]
                if np.isfinite(c):
                    best_c = c
                    best_s = steps[i - 1, j - 1 - lo[i - 1]]
                    best_p = 0
            if i > 0 and lo[i - 1] <= j and j <= hi[i - 1]:
                c = cost[i - 1, j - lo[i - 1]]
                if np.isfinite(c) and (c < best_c or (c == best_c and steps[i - 1, j - lo[i - 1]] < best_s)):
                    best_c = c
                    best_s = steps[i - 1, j - lo[i - 1]]
                    best_p = 1
            if j > lo[i]:
                c = cost[i, col - 1]
                if np.isfinite(c) and (c < best_c or (c == best_c and steps[i, col - 1] < best_s)):
                    best_c = c
                    best_s = steps[i, col - 1]
                    best_p = 2
            if best_p == 3:
                continue  # unreachable cell
            cost[i, col] = best_c + d
            steps[i, col] = best_s + 1
            pred[i, col] = best_p
    end_col = m - 1 - lo[n - 1]
    total = cost[n - 1, end_col]
    length = steps[n - 1, end_col]
    pi = np.empty(max(length, 0), np.int64)
    pj = np.empty(max(length, 0), np.int64)
    i = n - 1
    j = m - 1
    for t in range(length - 1, -1, -1):
        pi[t] = i
        pj[t] = j
        p = pred[i, j - lo[i]]
        if p == 0:
            i -= 1
            j -= 1
        elif p == 1:
            i -= 1
        elif p == 2:
            j -= 1
    return total, length, pi, pj


# --------------------------------------------------------------------------
# FastDTW coarsening and window projection
# --------------------------------------------------------------------------


@njit(cache=True)
def _halve(x):
    # Average adjacent frame pairs; an odd trailing frame passes through.
    n = x.shape[0]
    d = x.shape[1]
    k = n // 2
    out = np.empty((k + n % 2, d), np.float64)
    for i in range(k):
        for c in range(d):
            out[i, c] = (x[2 * i, c] + x[2 * i + 1, c]) * 0.5
    if n % 2 == 1:
        for c in range(d):
            out[k, c] = x[n - 1, c]
    return out


@njit(cache=True)
def _expand_window(pi, pj, nl, ml, n, m, radius):
    # Project a low-resolution path to per-row column ranges at full
    # resolution: inflate by radius in low-res space, then double.
    minj = np.full(nl, ml, np.int64)
    maxj = np.full(nl, -1, np.int64)
    for t in range(pi.shape[0]):
        r = pi[t]
        c = pj[t]
        if c < minj[r]:
            minj[r] = c
        if c > maxj[r]:
            maxj[r] = c
    lo_l = np.empty(nl, np.int64)
    hi_l = np.empty(nl, np.int64)
    for r in range(nl):
        r0 = r - radius
        if r0 < 0:
            r0 = 0
        r1 = r + radius + 1
        if r1 > nl:
            r1 = nl
        mn = minj[r0]
        mx = maxj[r0]
        for rr in range(r0 + 1, r1):
            if minj[rr] < mn:
                mn = minj[rr]
            if maxj[rr] > mx:
                mx = maxj[rr]
        v = mn - radius
        if v < 0:
            v = 0
        lo_l[r] = v
        w = mx + radius
        if w > ml - 1:
            w = ml - 1
        hi_l[r] = w
    lo = np.empty(n, np.int64)
    hi = np.empty(n, np.int64)
    for i in range(n):
        r = i // 2
        lo[i] = 2 * lo_l[r]
        w = 2 * hi_l[r] + 1
        if w > m - 1:
            w = m - 1
        hi[i] = w
    return lo, hi


@njit(cache=True)
def _fastdtw_core(a, b, radius):
    # Coarsening pyramid, finest level first; the first level too short to
    # halve is solved exactly, then each finer level refines within the
    # window projected from the level below.
    levels_a = [a]
    levels_b = [b]
    while levels_a[-1].shape[0] >= radius + 2 and levels_b[-1].shape[0] >= radius + 2:
        levels_a.append(_halve(levels_a[-1]))
        levels_b.append(_halve(levels_b[-1]))
    total, length, pi, pj = _dtw_full(levels_a[-1], levels_b[-1])
    for lev in range(len(levels_a) - 2, -1, -1):
        fa = levels_a[lev]
        fb = levels_b[lev]
        lo, hi = _expand_window(
            pi, pj, levels_a[lev + 1].shape[0], levels_b[lev + 1].shape[0], fa.shape[0], fb.shape[0], radius
        )
        total, length, pi, pj = _dtw_band(fa, fb, lo, hi)
    return total, length, pi, pj


# --------------------------------------------------------------------------
# Public kernels
# --------------------------------------------------------------------------


def _as_frames(x) -> np.ndarray:
    if isinstance(x, SpeechEmbedding):
        return x.frames
    frames = np.asarray(x, dtype=np.float64)
    if frames.ndim == 1:
        frames = frames.reshape(-1, 1)
    if frames.ndim != 2 or frames.shape[0] == 0 or frames.shape[1] == 0:
        raise KernelError(f"expected a non-empty frame sequence, got shape {frames.shape}")
    return np.ascontiguousarray(frames)


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    fa = _as_frames(a)
    fb = _as_frames(b)
    if fa.shape[1] != fb.shape[1]:
        raise KernelError(f"frame dimensions differ: {fa.shape[1]} vs {fb.shape[1]}")
    return fa, fb


def exact_dtw(a, b) -> DtwResult:
    """Globally optimal DTW distance (match/insert/delete, Euclidean frames)."""
    fa, fb = _check_pair(a, b)
    total, length, _, _ = _dtw_full(fa, fb)
    return DtwResult(float(total), int(length))


def fast_dtw(a, b, radius: int = DEFAULT_RADIUS) -> DtwResult:
    """Multilevel coarsen-and-refine DTW; upper-bounds exact_dtw.

    Equals exact_dtw whenever radius >= max(len(a), len(b)).
    """
    if radius < 1:
        raise KernelError(f"radius must be >= 1, got {radius}")
    fa, fb = _check_pair(a, b)
    total, length, _, _ = _fastdtw_core(fa, fb, radius)
    if not np.isfinite(total):
        raise KernelError("banded DTW window disconnected; this is a bug")
    return DtwResult(float(total), int(length))


def mean_pool(s) -> np.ndarray:
    """Component-wise mean over frames."""
    return _as_frames(s).mean(axis=0)


def cosine(u, v) -> float:
    """Cosine similarity clamped to [-1, 1]; zero-norm input yields 0."""
    uu = np.asarray(u, dtype=np.float64).ravel()
    vv = np.asarray(v, dtype=np.float64).ravel()
    if uu.shape[0] != vv.shape[0]:
        raise KernelError(f"vector dimensions differ: {uu.shape[0]} vs {vv.shape[0]}")
    nu = math.sqrt(float(uu @ uu))
    nv = math.sqrt(float(vv @ vv))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return min(1.0, max(-1.0, float(uu @ vv) / (nu * nv)))


def frame_level_similarity(a, b, radius: int = DEFAULT_RADIUS) -> float:
    """FastDTW distance mapped to (0, 1] via 1 / (1 + distance / path_length).

    Dividing by path length keeps the value comparable across sequence lengths.
    """
    r = fast_dtw(a, b, radius)
    return 1.0 / (1.0 + r.distance / r.path_length)


def speech_similarity(a, b, weights: SpeechSimilarityWeights = DEFAULT_WEIGHTS, radius: int = DEFAULT_RADIUS) -> float:
    """Weighted sum of frame-level (FastDTW) and pooled-cosine similarity."""
    frame_sim = frame_level_similarity(a, b, radius)
    utt_sim = cosine(mean_pool(a), mean_pool(b))
    return weights.w_frame * frame_sim + weights.w_utt * utt_sim
