"""Voice activity, inter-pausal units and floor-switch candidates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import DEFAULT_IPU_GAP, TIME_EPS, InfeasibleError, InputError, Segment

# ---------------------------------------------------------------------------
# Energy VAD
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VadParams:
    """Frame energy thresholding.

    The speech threshold is ``percentile(frame dB, threshold_percentile) +
    threshold_margin_db``, capped at ``peak_margin_db`` below the loudest
    frame (so constant-level audio is still speech) and never lower than
    ``floor_db`` dBFS (so digital silence is never speech).
    """

    frame_len: float = 0.025
    hop: float = 0.010
    threshold_percentile: float = 30.0
    threshold_margin_db: float = 6.0
    min_speech: float = 0.10
    min_silence: float = 0.05
    floor_db: float = -60.0
    peak_margin_db: float = 3.0

    def __post_init__(self):
        if not (self.frame_len >= self.hop > 0):
            raise InfeasibleError("VadParams: need frame_len >= hop > 0")
        if not (self.min_speech > 0 and self.min_silence > 0):
            raise InfeasibleError("VadParams: min_speech and min_silence must be positive")
        if not 0 < self.threshold_percentile < 100:
            raise InfeasibleError("VadParams: threshold_percentile must lie in (0, 100)")


def frame_energy_db(samples: np.ndarray, sample_rate: float, frame_len: float, hop: float) -> np.ndarray:
    """RMS level in dBFS of each analysis frame (frame k starts at k * hop)."""
    flen = max(1, int(round(frame_len * sample_rate)))
    step = max(1, int(round(hop * sample_rate)))
    x = np.asarray(samples, dtype=float)
    if len(x) < flen:
        x = np.pad(x, (0, flen - len(x)))
    n_frames = 1 + (len(x) - flen) // step
    frames = np.lib.stride_tricks.sliding_window_view(x, flen)[::step][:n_frames]
    rms = np.sqrt(np.mean(frames * frames, axis=1))
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(rms)
    return np.where(np.isfinite(db), db, -400.0)


def _bridge_and_prune(intervals, min_silence, min_speech):
    bridged = []
    for start, end in intervals:
        if bridged and start - bridged[-1][1] < min_silence - TIME_EPS:
            bridged[-1] = (bridged[-1][0], max(end, bridged[-1][1]))
        else:
            bridged.append((start, end))
    return [(s, e) for s, e in bridged if e - s >= min_speech - TIME_EPS]


def energy_vad(
    samples: np.ndarray,
    sample_rate: float,
    params: VadParams = VadParams(),
    participant_id: str = "",
) -> list[Segment]:
    """Detect speech regions in a mono signal by thresholding frame energy.

    Short silences (< ``min_silence``) are bridged first, then speech runs
    shorter than ``min_speech`` are dropped.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise InputError("empty input")
    if not sample_rate > 0:
        raise InputError("sample rate must be positive")
    duration = len(samples) / sample_rate
    db = frame_energy_db(samples, sample_rate, params.frame_len, params.hop)
    threshold = np.percentile(db, params.threshold_percentile) + params.threshold_margin_db
    threshold = max(min(threshold, db.max() - params.peak_margin_db), params.floor_db)
    speech = db > threshold

    step = max(1, int(round(params.hop * sample_rate))) / sample_rate
    flen = max(1, int(round(params.frame_len * sample_rate))) / sample_rate
    runs = []
    edges = np.flatnonzero(np.diff(np.concatenate(([0], speech.astype(int), [0]))))
    for first, stop in zip(edges[::2], edges[1::2]):
        start = first * step
        end = min((stop - 1) * step + flen, duration)
        runs.append((start, end))
    runs = _bridge_and_prune(runs, params.min_silence, params.min_speech)
    return [Segment(participant_id, s, e) for s, e in runs]


# ---------------------------------------------------------------------------
# IPUs
# ---------------------------------------------------------------------------


def check_segment_sequence(segs: Sequence[Segment]) -> None:
    for i, seg in enumerate(segs):
        if not seg.start < seg.end:
            raise InputError(f"invalid VAD sequence: segment {i} has start >= end")
        if i and seg.start < segs[i - 1].end:
            raise InputError(f"invalid VAD sequence: segment {i} overlaps or precedes segment {i - 1}")
        if i and seg.participant_id != segs[0].participant_id:
            raise InputError("invalid VAD sequence: mixed participants")


def merge_to_ipus(vad: Sequence[Segment], gap_threshold: float = DEFAULT_IPU_GAP) -> list[Segment]:
    """Merge VAD segments separated by less than ``gap_threshold`` seconds."""
    check_segment_sequence(vad)
    out: list[Segment] = []
    for seg in vad:
        if out and seg.start - out[-1].end < gap_threshold - TIME_EPS:
            out[-1] = Segment(seg.participant_id, out[-1].start, seg.end)
        else:
            out.append(seg)
    return out


# ---------------------------------------------------------------------------
# Floor and switch candidates
# ---------------------------------------------------------------------------


def floor_holder(ipus: Mapping[str, Sequence[Segment]], t: float, before: bool = False) -> Optional[str]:
    """Participant holding the floor at ``t`` (or just before ``t``).

    The holder is whoever has an IPU active at ``t``; with nobody active it
    is whoever finished speaking most recently.  During simultaneous speech
    the incumbent (earlier start) keeps the floor.  Exact ties go to the
    holder from just before the tie.
    """
    if before:
        def started(seg):
            return seg.start < t

        def active(seg):
            return seg.start < t <= seg.end
    else:
        def started(seg):
            return seg.start <= t

        def active(seg):
            return seg.start <= t < seg.end

    live, done = [], []
    for pid, segs in ipus.items():
        for seg in segs:
            if not started(seg):
                break
            (live if active(seg) else done).append((seg, pid))
    if live:
        first = min(s.start for s, _ in live)
        holders = {pid for s, pid in live if s.start == first}
        if len(holders) == 1:
            return holders.pop()
        return floor_holder(ipus, first, before=True)
    if not done:
        return None
    last = max(s.end for s, _ in done)
    holders = {pid for s, pid in done if s.end == last}
    if len(holders) == 1:
        return holders.pop()
    return floor_holder(ipus, last, before=True)


@dataclass(frozen=True)
class SwitchCandidate:
    speaker_id: str
    initiator_id: str
    speaker_last_ipu: Segment
    initiator_first_ipu: Segment

    @property
    def onset(self) -> float:
        return self.initiator_first_ipu.start


def detect_switch_candidates(ipus_a: Sequence[Segment], ipus_b: Sequence[Segment]) -> list[SwitchCandidate]:
    """One candidate per IPU onset made while (or after) the other side held the floor."""
    ipus = _by_participant(ipus_a, ipus_b)
    if len(ipus) < 2:
        return []
    pa, pb = ipus
    out = []
    for x, y in ((pa, pb), (pb, pa)):
        for seg in ipus[x]:
            if floor_holder(ipus, seg.start, before=True) != y:
                continue
            prior = [s for s in ipus[y] if s.start < seg.start]
            out.append(SwitchCandidate(y, x, prior[-1], seg))
    out.sort(key=lambda c: (c.onset, c.initiator_id))
    return out


def _by_participant(*seqs: Sequence[Segment]) -> dict[str, list[Segment]]:
    out: dict[str, list[Segment]] = {}
    for seq in seqs:
        for seg in seq:
            out.setdefault(seg.participant_id, []).append(seg)
    if len(out) > 2:
        raise InputError("switch detection is strictly dyadic")
    return {pid: sorted(segs, key=lambda s: s.start) for pid, segs in sorted(out.items())}


def speech_time(segs: Sequence[Segment]) -> float:
    return math.fsum(s.duration for s in segs)
