"""Interlocutor synchrony: Pearson correlation, lagged cross-correlation and DTW."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numba
import numpy as np

from .core import FeatureTrack, InfeasibleError, InputError


class Measure(str, Enum):
    PCC = "PCC"
    TLCC = "TLCC"
    DTW = "DTW"


@dataclass(frozen=True)
class SyncParams:
    measure: Measure = Measure.PCC
    max_lag: float = 4.0  # seconds, TLCC only
    window: float = 4.0  # seconds
    hop: int = 1  # frames
    dtw_band: Optional[int] = None  # frames; None = unconstrained

    def __post_init__(self):
        object.__setattr__(self, "measure", Measure(self.measure))
        if not (self.max_lag > 0 and self.window > 0 and self.hop >= 1):
            raise InfeasibleError("SyncParams: need max_lag > 0, window > 0 and hop >= 1")
        if self.dtw_band is not None and self.dtw_band < 0:
            raise InfeasibleError("SyncParams: dtw_band must be >= 0")


@dataclass(frozen=True, eq=False)
class SynchronyCurve:
    """One value per window centre; ``first_center`` is the frame index of ``values[0]``."""

    measure: Measure
    feature_name: str
    sample_rate_hz: float
    values: np.ndarray
    first_center: int = 0
    hop: int = 1
    start_time: float = 0.0

    @property
    def times(self) -> np.ndarray:
        frames = self.first_center + self.hop * np.arange(len(self.values))
        return self.start_time + frames / self.sample_rate_hz

    def as_track(self, participant_id: str = "dyad") -> FeatureTrack:
        """View the curve as a track so it can be onset-aligned like any feature."""
        return FeatureTrack(
            participant_id,
            f"{self.measure.value}:{self.feature_name}",
            self.values,
            self.sample_rate_hz / self.hop,
            self.start_time + self.first_center / self.sample_rate_hz,
        )


# ---------------------------------------------------------------------------
# Pointwise measures
# ---------------------------------------------------------------------------


def _as_pair(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError(f"length mismatch: {x.shape} vs {y.shape}")
    return x, y


def pcc(x, y) -> float:
    """Pearson product-moment correlation of two equal-length sequences."""
    x, y = _as_pair(x, y)
    if len(x) < 2:
        raise InputError("pcc needs at least 2 samples")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise InputError("zero variance")
    dx = x - x.mean()
    dy = y - y.mean()
    r = np.dot(dx, dy) / math.sqrt(np.dot(dx, dx) * np.dot(dy, dy))
    return float(min(1.0, max(-1.0, r)))


def _better(value, lag, best_value, best_lag):
    if best_value is None or value > best_value:
        return True
    if value < best_value:
        return False
    if abs(lag) != abs(best_lag):
        return abs(lag) < abs(best_lag)
    return lag < best_lag


def tlcc(x, y, max_lag_frames: int) -> tuple[float, int]:
    """Maximum correlation over integer lags in ``[-max_lag_frames, max_lag_frames]``.

    At lag ``l`` sample ``x[i]`` is paired with ``y[i + l]`` over the
    overlapping region, so ``y`` delayed by ``s`` frames peaks at ``l = s``.
    Ties prefer the smaller ``|l|``, then the negative lag.
    """
    x, y = _as_pair(x, y)
    n = len(x)
    if max_lag_frames < 0 or n <= max_lag_frames + 2:
        raise InputError(f"tlcc needs more than max_lag_frames + 2 = {max_lag_frames + 2} samples, got {n}")
    best_value, best_lag = None, 0
    for lag in range(-max_lag_frames, max_lag_frames + 1):
        lo, hi = max(0, -lag), min(n, n - lag)
        a, b = x[lo:hi], y[lo + lag:hi + lag]
        if np.ptp(a) == 0 or np.ptp(b) == 0:
            continue
        value = pcc(a, b)
        if _better(value, lag, best_value, best_lag):
            best_value, best_lag = value, lag
    if best_value is None:
        raise InputError("zero variance")
    return best_value, best_lag


@numba.njit(cache=True)
def _dtw_cost(x, y, band):
    n, m = len(x), len(y)
    acc = np.full((n, m), np.inf)
    for i in range(n):
        lo, hi = 0, m
        if band >= 0:
            lo = max(0, i - band)
            hi = min(m, i + band + 1)
        for j in range(lo, hi):
            c = abs(x[i] - y[j])
            if i == 0 and j == 0:
                acc[i, j] = c
                continue
            best = np.inf
            if i > 0 and j > 0 and acc[i - 1, j - 1] < best:
                best = acc[i - 1, j - 1]
            if i > 0 and acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if j > 0 and acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = c + best
    return acc[n - 1, m - 1]


def dtw(x, y, band: Optional[int] = None) -> float:
    """DTW distance with ``|x_i - y_j|`` cost, normalised by ``len(x) + len(y)``.

    ``band`` restricts cells to ``|i - j| <= band`` (Sakoe-Chiba).
    """
    x = np.ascontiguousarray(x, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if x.size == 0 or y.size == 0:
        raise InputError("dtw needs non-empty sequences")
    if band is not None and abs(len(x) - len(y)) > band:
        raise InfeasibleError("infeasible band")
    cost = _dtw_cost(x, y, -1 if band is None else int(band))
    if not math.isfinite(cost):
        raise InfeasibleError("infeasible band")
    return float(cost / (len(x) + len(y)))


# ---------------------------------------------------------------------------
# Sliding windows
# ---------------------------------------------------------------------------


def window_frames(window: float, rate: float) -> int:
    return int(round(window * rate))


def center_range(n: int, width: int, margin: int = 0) -> tuple[int, int]:
    """First and last valid centre frame (last < first means none)."""
    left = width // 2
    right = width - left - 1
    return left + margin, n - 1 - right - margin


def curve_length(n: int, width: int, hop: int, margin: int = 0) -> int:
    first, last = center_range(n, width, margin)
    return 0 if last < first else (last - first) // hop + 1


def _windowed_pcc(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise correlation; NaN for rows with missing or constant data."""
    bad = np.isnan(a).any(axis=1) | np.isnan(b).any(axis=1)
    with np.errstate(invalid="ignore"):
        bad |= (np.ptp(a, axis=1) == 0) | (np.ptp(b, axis=1) == 0)
    da = a - a.mean(axis=1, keepdims=True)
    db = b - b.mean(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.einsum("ij,ij->i", da, db) / np.sqrt(np.einsum("ij,ij->i", da, da) * np.einsum("ij,ij->i", db, db))
    r = np.clip(r, -1.0, 1.0)
    r[bad] = np.nan
    return r


def sliding_synchrony(track_a: FeatureTrack, track_b: FeatureTrack, params: SyncParams = SyncParams()) -> SynchronyCurve:
    """Synchrony between two aligned tracks over centred sliding windows.

    TLCC compares the window of ``track_a`` with full-length windows of
    ``track_b`` shifted by every lag up to ``max_lag``, so valid centres keep
    ``max_lag`` frames of margin on each side.  Windows touching a missing
    sample (or degenerate for the measure) give NaN.
    """
    if track_a.sample_rate_hz != track_b.sample_rate_hz or track_a.feature_name != track_b.feature_name:
        raise InputError("incompatible tracks: sample rate and feature name must match")
    if abs(track_a.start_time - track_b.start_time) > 1e-9 or len(track_a.values) != len(track_b.values):
        raise InputError("incompatible tracks: tracks must share start time and length")
    rate = track_a.sample_rate_hz
    width = window_frames(params.window, rate)
    if width < 4:
        raise InfeasibleError(f"window of {params.window} s is only {width} frames at {rate} Hz (need >= 4)")
    a, b = track_a.values, track_b.values
    n = len(a)
    margin = window_frames(params.max_lag, rate) if params.measure is Measure.TLCC else 0
    first, last = center_range(n, width, margin)
    count = curve_length(n, width, params.hop, margin)
    centers = first + params.hop * np.arange(count)
    starts = centers - width // 2

    if count == 0:
        values = np.empty(0)
    elif params.measure is Measure.PCC:
        wa = np.lib.stride_tricks.sliding_window_view(a, width)[starts]
        wb = np.lib.stride_tricks.sliding_window_view(b, width)[starts]
        values = _windowed_pcc(wa, wb)
    elif params.measure is Measure.TLCC:
        values = _sliding_tlcc(a, b, starts, width, margin)
    else:
        values = _sliding_dtw(a, b, starts, width, params.dtw_band)
    return SynchronyCurve(params.measure, track_a.feature_name, rate, values, first, params.hop, track_a.start_time)


@numba.njit(cache=True)
def _sliding_tlcc_kernel(a, b, starts, width, max_lag):
    # Window sums come from prefix sums, so each (centre, lag) costs O(1).
    # Inputs are mean-centred with missing samples zeroed; miss_* and
    # change_* are prefix counts of missing samples and of value changes.
    n = len(a)
    na = len(starts)
    miss_a = np.zeros(n + 1)
    miss_b = np.zeros(n + 1)
    chg_a = np.zeros(n + 1)
    chg_b = np.zeros(n + 1)
    sa = np.zeros(n + 1)
    sb = np.zeros(n + 1)
    qa = np.zeros(n + 1)
    qb = np.zeros(n + 1)
    # centring keeps the prefix sums small
    mean_a = mean_b = 0.0
    ca = cb = 0
    for k in range(n):
        if not np.isnan(a[k]):
            mean_a += a[k]
            ca += 1
        if not np.isnan(b[k]):
            mean_b += b[k]
            cb += 1
    mean_a = mean_a / ca if ca else 0.0
    mean_b = mean_b / cb if cb else 0.0
    x = np.zeros(n)
    y = np.zeros(n)
    for k in range(n):
        xa, yb = a[k], b[k]
        miss_a[k + 1] = miss_a[k] + (1 if np.isnan(xa) else 0)
        miss_b[k + 1] = miss_b[k] + (1 if np.isnan(yb) else 0)
        chg_a[k + 1] = chg_a[k] + (1 if k > 0 and a[k] != a[k - 1] else 0)
        chg_b[k + 1] = chg_b[k] + (1 if k > 0 and b[k] != b[k - 1] else 0)
        x[k] = 0.0 if np.isnan(xa) else xa - mean_a
        y[k] = 0.0 if np.isnan(yb) else yb - mean_b
        sa[k + 1] = sa[k] + x[k]
        sb[k + 1] = sb[k] + y[k]
        qa[k + 1] = qa[k] + x[k] * x[k]
        qb[k + 1] = qb[k] + y[k] * y[k]

    best = np.full(na, np.nan)
    valid = np.zeros(na, dtype=np.bool_)
    for c in range(na):
        s = starts[c]
        ok = miss_a[s + width] - miss_a[s] == 0 and miss_b[s + width + max_lag] - miss_b[s - max_lag] == 0
        # a constant window of track_a is constant at every lag
        valid[c] = ok and chg_a[s + width] - chg_a[s + 1] > 0

    prod = np.zeros(n + 1)
    # |lag| ascending, negative first; strict improvement keeps the tie-break
    for step in range(2 * max_lag + 1):
        lag = -((step + 1) // 2) if step % 2 == 1 else step // 2
        lo, hi = max(0, -lag), min(n, n - lag)
        prod[: lo + 1] = 0.0
        for k in range(lo, hi):
            prod[k + 1] = prod[k] + x[k] * y[k + lag]
        for c in range(na):
            if not valid[c]:
                continue
            s = starts[c]
            t = s + lag
            if chg_b[t + width] - chg_b[t + 1] == 0:
                continue
            sx = sa[s + width] - sa[s]
            sy = sb[t + width] - sb[t]
            sxx = qa[s + width] - qa[s] - sx * sx / width
            syy = qb[t + width] - qb[t] - sy * sy / width
            sxy = prod[s + width] - prod[s] - sx * sy / width
            den = sxx * syy
            if den <= 0:
                continue
            r = min(1.0, max(-1.0, sxy / np.sqrt(den)))
            if np.isnan(best[c]) or r > best[c]:
                best[c] = r
    return best


@numba.njit(cache=True)
def _sliding_dtw_kernel(a, b, starts, width, band):
    out = np.full(len(starts), np.nan)
    for c in range(len(starts)):
        s = starts[c]
        x, y = a[s:s + width], b[s:s + width]
        if np.isnan(x).any() or np.isnan(y).any():
            continue
        out[c] = _dtw_cost(x, y, band) / (2 * width)
    return out


def _sliding_tlcc(a, b, starts, width, max_lag):
    return _sliding_tlcc_kernel(np.ascontiguousarray(a), np.ascontiguousarray(b), starts.astype(np.int64), width, max_lag)


def _sliding_dtw(a, b, starts, width, band):
    band = -1 if band is None else int(band)
    return _sliding_dtw_kernel(np.ascontiguousarray(a), np.ascontiguousarray(b), starts.astype(np.int64), width, band)
