"""Normalisation, interval features, Welch's t-test and corpus statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .core import (
    DEFAULT_SAMPLE_RATE,
    TIME_EPS,
    Exchange,
    ExchangeType,
    FeatureTrack,
    InputError,
    Intent,
    Outcome,
    Role,
    SessionRecord,
)
from .segmentation import speech_time

ROLES = ("speaker", "initiator")


class IntervalSpec(str, Enum):
    TAKEN = "taken"  # t1 -> t2, speaker's last IPU
    GAP = "gap"  # t2 -> t3, empty under overlap
    TAKER = "taker"  # t3 -> t4, initiator's first IPU
    FULL = "full"  # t1 -> t4


# ---------------------------------------------------------------------------
# Track utilities
# ---------------------------------------------------------------------------


def normalize_track(track: FeatureTrack) -> FeatureTrack:
    """Z-score over non-missing samples with the population standard deviation."""
    v = track.values
    ok = ~np.isnan(v)
    if ok.sum() < 2:
        raise InputError(f"track {track.key}: need at least 2 non-missing samples to normalise")
    mean = v[ok].mean()
    std = v[ok].std()
    out = np.where(ok, 0.0, np.nan) if std == 0 else (v - mean) / std
    return track.with_values(out)


def resample_track(track: FeatureTrack, rate: float = DEFAULT_SAMPLE_RATE) -> FeatureTrack:
    """Linear interpolation onto a new frame grid; a missing neighbour gives a missing sample."""
    if track.sample_rate_hz == rate:
        return track
    n = len(track.values)
    if n == 0:
        return FeatureTrack(track.participant_id, track.feature_name, [], rate, track.start_time)
    span = (n - 1) / track.sample_rate_hz
    m = int(math.floor(span * rate + TIME_EPS)) + 1
    pos = np.arange(m) * track.sample_rate_hz / rate
    lo = np.clip(np.floor(pos + TIME_EPS).astype(int), 0, n - 1)
    hi = np.minimum(lo + 1, n - 1)
    frac = np.clip(pos - lo, 0.0, 1.0)
    v = track.values
    exact = frac < TIME_EPS
    out = np.where(exact, v[lo], v[lo] * (1 - frac) + v[hi] * frac)
    out[~exact & (np.isnan(v[lo]) | np.isnan(v[hi]))] = np.nan
    return FeatureTrack(track.participant_id, track.feature_name, out, rate, track.start_time)


def frame_index(t: float, track: FeatureTrack) -> int:
    """Index of the first frame at or after ``t``."""
    return int(math.ceil((t - track.start_time) * track.sample_rate_hz - 1e-6))


def interval_bounds(exchange: Exchange, which: IntervalSpec) -> tuple[float, float]:
    t1, t2, t3, t4 = exchange.anchors.as_tuple()
    which = IntervalSpec(which)
    if which is IntervalSpec.TAKEN:
        return t1, t2
    if which is IntervalSpec.TAKER:
        return t3, t4
    if which is IntervalSpec.FULL:
        return t1, t4
    return (t2, t3) if t3 > t2 else (t2, t2)


def window_mean(track: FeatureTrack, start: float, end: float) -> float:
    """Mean of non-missing samples with times in ``[start, end)``; NaN if none."""
    lo = max(frame_index(start, track), 0)
    hi = min(frame_index(end, track), len(track.values))
    if hi <= lo:
        return math.nan
    seg = track.values[lo:hi]
    seg = seg[~np.isnan(seg)]
    return float(seg.mean()) if seg.size else math.nan


def interval_mean(track: FeatureTrack, exchange: Exchange, which: IntervalSpec, role: str) -> float:
    expected = exchange.participant_for(role)
    if track.participant_id != expected:
        raise InputError(f"track of {track.participant_id!r} does not belong to the {role} ({expected!r})")
    return window_mean(track, *interval_bounds(exchange, which))


# ---------------------------------------------------------------------------
# Student t distribution via the regularised incomplete beta function
# ---------------------------------------------------------------------------


def _beta_cf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for I_x(a, b)
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta function ``I_x(a, b)``."""
    if not (a > 0 and b > 0):
        raise ValueError("betainc needs a, b > 0")
    if x <= 0:
        return 0.0
    if x >= 1:
        return 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    if math.isnan(t):
        return math.nan
    return min(1.0, betainc(df / 2.0, 0.5, df / (df + t * t)))


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    degrees_of_freedom: float
    p_value: float
    n_a: int
    n_b: int
    mean_a: float
    mean_b: float

    def significant(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha


def welch_t_test(group_a: Sequence[float], group_b: Sequence[float]) -> TTestResult:
    """Two-sided Welch unequal-variance t-test with Welch-Satterthwaite df."""
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise InputError("welch_t_test needs at least 2 samples per group")
    na, nb = a.size, b.size
    ma, mb = float(a.mean()), float(b.mean())
    va = 0.0 if np.ptp(a) == 0 else float(a.var(ddof=1))
    vb = 0.0 if np.ptp(b) == 0 else float(b.var(ddof=1))
    if va == 0 and vb == 0:
        if ma == mb:
            raise InputError("degenerate: both groups are constant and equal")
        return TTestResult(math.copysign(math.inf, ma - mb), float(na + nb - 2), 0.0, na, nb, ma, mb)
    sa, sb = va / na, vb / nb
    se2 = sa + sb
    t = (ma - mb) / math.sqrt(se2)
    df = se2 * se2 / (sa * sa / (na - 1) + sb * sb / (nb - 1))
    return TTestResult(t, df, student_t_two_sided_p(t, df), na, nb, ma, mb)


# ---------------------------------------------------------------------------
# Timing statistics
# ---------------------------------------------------------------------------


def summarize(values: Iterable[float]) -> dict:
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    if v.size == 0:
        return {"n": 0}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {
        "n": int(v.size),
        "mean": float(v.mean()),
        "median": float(med),
        "std": float(v.std(ddof=1)) if v.size > 1 else 0.0,
        "min": float(v.min()),
        "q1": float(q1),
        "q3": float(q3),
        "max": float(v.max()),
    }


def exchange_groups(ex: Exchange) -> list[str]:
    """Group keys an exchange contributes to: its type plus labelled interruption subtypes."""
    keys = [ex.type.value]
    if ex.type is not ExchangeType.INTERRUPTION:
        return keys
    outcome, intent = ex.labels.outcome, ex.labels.intent
    if outcome is not Outcome.UNKNOWN:
        keys.append(f"interruption/{outcome.value}")
    if intent is not Intent.UNKNOWN:
        keys.append(f"interruption/{intent.value}")
        if outcome is not Outcome.UNKNOWN:
            keys.append(f"interruption/{outcome.value}/{intent.value}")
    return keys


def timing_stats(sessions: Sequence[SessionRecord]) -> dict:
    """First-IPU duration, overlap and onset-distance distributions per exchange group."""
    groups: dict[str, list[Exchange]] = {}
    for session in sessions:
        for ex in session.exchanges:
            for key in exchange_groups(ex):
                groups.setdefault(key, []).append(ex)
    report = {}
    for key in sorted(groups):
        exs = groups[key]
        overlaps = [ex.anchors.overlap for ex in exs]
        positive = [o for o in overlaps if o > 0]
        report[key] = {
            "n": len(exs),
            "first_ipu": summarize(ex.first_ipu for ex in exs),
            "overlap_rate": len(positive) / len(exs),
            "overlap": summarize(positive),
            "onset_distance": summarize(ex.onset_distance for ex in exs),
        }
    return report


def role_stats(sessions: Sequence[SessionRecord]) -> dict:
    """Speaking-time share, initiator share and first-IPU means per role."""
    shares = {r.value: [] for r in Role}
    initiated = {t.value: {r.value: 0 for r in Role} for t in ExchangeType}
    first_ipu = {t.value: {r.value: [] for r in Role} for t in ExchangeType}
    for session in sessions:
        for p in session.participants:
            if session.session_length > 0:
                shares[p.role.value].append(speech_time(session.ipus.get(p.id, ())) / session.session_length)
        for ex in session.exchanges:
            role = session.role_of(ex.initiator_id).value
            initiated[ex.type.value][role] += 1
            first_ipu[ex.type.value][role].append(ex.first_ipu)
    initiator_share = {}
    for kind, per_role in initiated.items():
        total = sum(per_role.values())
        initiator_share[kind] = {r: (c / total if total else None) for r, c in per_role.items()}
    return {
        "speaking_share": {r: (float(np.mean(v)) if v else None) for r, v in shares.items()},
        "initiator_counts": initiated,
        "initiator_share": initiator_share,
        "first_ipu_mean": {
            kind: {r: (float(np.mean(v)) if v else None) for r, v in per_role.items()}
            for kind, per_role in first_ipu.items()
        },
    }


# ---------------------------------------------------------------------------
# Onset-aligned curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AlignedCurve:
    feature_name: str
    role: str
    exchange_type: ExchangeType
    frame_offsets: np.ndarray
    mean_values: np.ndarray
    support_counts: np.ndarray

    def rows(self):
        for k, m, s in zip(self.frame_offsets, self.mean_values, self.support_counts):
            yield int(k), float(m), int(s)


def align_to_onsets(
    pairs: Iterable[tuple[FeatureTrack, Exchange]],
    before: float = 10.0,
    after: float = 10.0,
    rate: float = DEFAULT_SAMPLE_RATE,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Average tracks around each exchange onset, masked to the exchange's own ``[t1, t4)``.

    Offset 0 is the first frame at or after ``t3``.
    """
    n_before = int(round(before * rate))
    n_after = int(round(after * rate))
    offsets = np.arange(-n_before, n_after + 1)
    total = np.zeros(len(offsets))
    support = np.zeros(len(offsets), dtype=int)
    for track, ex in pairs:
        track = resample_track(track, rate)
        t1, _, t3, t4 = ex.anchors.as_tuple()
        idx = frame_index(t3, track) + offsets
        inside = (idx >= 0) & (idx < len(track.values))
        vals = np.full(len(offsets), np.nan)
        vals[inside] = track.values[idx[inside]]
        times = track.start_time + idx / track.sample_rate_hz
        vals[(times < t1 - 1e-6) | (times >= t4 - 1e-6)] = np.nan
        ok = ~np.isnan(vals)
        total[ok] += vals[ok]
        support += ok
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(support > 0, total / np.maximum(support, 1), np.nan)
    return offsets, mean, support


def aligned_average_curves(
    sessions: Sequence[SessionRecord],
    feature_name: str,
    role: str,
    exchange_type: ExchangeType,
    window_before: float = 10.0,
    window_after: float = 10.0,
) -> AlignedCurve:
    exchange_type = ExchangeType(exchange_type)
    pairs = []
    for session in sessions:
        for ex in session.exchanges:
            if ex.type is not exchange_type:
                continue
            track = session.tracks.get((ex.participant_for(role), feature_name))
            if track is not None:
                pairs.append((track, ex))
    if not pairs:
        empty = np.empty(0)
        return AlignedCurve(feature_name, role, exchange_type, empty.astype(int), empty, empty.astype(int))
    offsets, mean, support = align_to_onsets(pairs, window_before, window_after)
    return AlignedCurve(feature_name, role, exchange_type, offsets, mean, support)


# ---------------------------------------------------------------------------
# Feature comparison
# ---------------------------------------------------------------------------


def _interval_group(sessions, feature, kind, role, which):
    values = []
    for session in sessions:
        for ex in session.exchanges:
            if ex.type is not kind:
                continue
            track = session.tracks.get((ex.participant_for(role), feature))
            if track is None:
                continue
            m = interval_mean(track, ex, which, role)
            if not math.isnan(m):
                values.append(m)
    return values


def _compare(a, b, alpha) -> dict:
    cell = {"n_a": len(a), "n_b": len(b)}
    if len(a) < 2 or len(b) < 2:
        cell["status"] = "insufficient"
        return cell
    try:
        res = welch_t_test(a, b)
    except InputError:
        cell["status"] = "degenerate"
        return cell
    cell.update(
        status="ok",
        mean_a=res.mean_a,
        mean_b=res.mean_b,
        t_statistic=res.t_statistic,
        degrees_of_freedom=res.degrees_of_freedom,
        p_value=res.p_value,
        significant=res.significant(alpha),
    )
    return cell


def feature_comparison(sessions: Sequence[SessionRecord], feature_names: Sequence[str], alpha: float = 0.05) -> dict:
    """Speaker (taken interval) vs initiator (taker interval) per feature and type,
    plus pairwise comparisons of initiator groups across exchange types."""
    report = {}
    kinds = list(ExchangeType)
    for feature in feature_names:
        initiator = {k: _interval_group(sessions, feature, k, "initiator", IntervalSpec.TAKER) for k in kinds}
        per_type = {}
        for k in kinds:
            speaker = _interval_group(sessions, feature, k, "speaker", IntervalSpec.TAKEN)
            per_type[k.value] = _compare(speaker, initiator[k], alpha)
        cross = {}
        for i, ka in enumerate(kinds):
            for kb in kinds[i + 1:]:
                cross[f"{ka.value}_vs_{kb.value}"] = _compare(initiator[ka], initiator[kb], alpha)
        report[feature] = {"speaker_vs_initiator": per_type, "initiator_across_types": cross}
    return report
