"""
Shared domain types for dyadic turn-taking analysis.

All times are seconds (double precision) measured from session start.
Frame indices are always derived from ``start_time`` and ``sample_rate_hz``
and are never stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

# Absolute tolerance used for every time comparison (boundary cases such as
# a gap of exactly 50 ms must not depend on float representation).
TIME_EPS = 1e-9

DEFAULT_IPU_GAP = 0.050
DEFAULT_SAMPLE_RATE = 25.0

FEATURES = ("F0", "loudness", "AU01", "AU02", "AU04", "AU06", "AU12")


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class TurnsyncError(Exception):
    """Base class; ``exit_code`` is what the CLI returns."""

    exit_code = 1


class InputError(TurnsyncError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 1


class InfeasibleError(TurnsyncError, ValueError):
    """A configuration that cannot be satisfied."""

    exit_code = 2


class InvariantError(TurnsyncError, RuntimeError):
    """An internal consistency check failed."""

    exit_code = 3


# ---------------------------------------------------------------------------
# Enumerations
# ---------------------------------------------------------------------------


class Role(str, Enum):
    EXPERT = "expert"
    NOVICE = "novice"


class ExchangeType(str, Enum):
    SMOOTH_TURN = "smooth"
    BACKCHANNEL = "backchannel"
    INTERRUPTION = "interruption"


class Outcome(str, Enum):
    SUCCESSFUL = "successful"
    FAILED = "failed"
    UNKNOWN = "unknown"


class Intent(str, Enum):
    COOPERATIVE = "cooperative"
    COMPETITIVE = "competitive"
    UNKNOWN = "unknown"


class IntentDetail(str, Enum):
    AGREEMENT = "agreement"
    CLARIFICATION = "clarification"
    ASSISTANCE = "assistance"
    DISAGREEMENT = "disagreement"
    FLOOR_TAKING = "floor_taking"
    TOPIC_CHANGE = "topic_change"
    TANGENTIALIZATION = "tangentialization"

    @property
    def intent(self) -> Intent:
        if self in (IntentDetail.AGREEMENT, IntentDetail.CLARIFICATION, IntentDetail.ASSISTANCE):
            return Intent.COOPERATIVE
        return Intent.COMPETITIVE


class Source(str, Enum):
    AUTO = "auto"
    ANNOTATION = "annotation"


# ---------------------------------------------------------------------------
# Participants and signals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Participant:
    id: str
    role: Role


@dataclass(frozen=True, eq=False)
class FeatureTrack:
    """Uniformly sampled scalar series; NaN marks a missing sample."""

    participant_id: str
    feature_name: str
    values: np.ndarray
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE
    start_time: float = 0.0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if not self.sample_rate_hz > 0:
            raise InputError(f"track {self.key}: sample rate must be positive")

    @property
    def key(self) -> tuple[str, str]:
        return (self.participant_id, self.feature_name)

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self.values)) / self.sample_rate_hz

    @property
    def end_time(self) -> float:
        return self.start_time + len(self.values) / self.sample_rate_hz

    def with_values(self, values) -> "FeatureTrack":
        return FeatureTrack(self.participant_id, self.feature_name, values, self.sample_rate_hz, self.start_time)

    def __eq__(self, other):
        if not isinstance(other, FeatureTrack):
            return NotImplemented
        return (
            self.key == other.key
            and self.sample_rate_hz == other.sample_rate_hz
            and self.start_time == other.start_time
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None


@dataclass(frozen=True)
class Segment:
    """A speech interval ``[start, end)`` for one participant."""

    participant_id: str
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start

    def active_at(self, t: float) -> bool:
        return self.start <= t < self.end


# VAD output and IPUs share one shape; the IPU gap invariant is enforced by
# merge_to_ipus and checked by validate_session.
VadSegment = Segment
IpuSegment = Segment


# ---------------------------------------------------------------------------
# Exchanges
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InterruptionLabels:
    outcome: Outcome = Outcome.UNKNOWN
    intent: Intent = Intent.UNKNOWN
    intent_detail: Optional[IntentDetail] = None

    def problems(self) -> list[str]:
        if self.intent_detail is not None and self.intent_detail.intent is not self.intent:
            return [
                f"intent_detail {self.intent_detail.value!r} requires intent "
                f"{self.intent_detail.intent.value!r}, got {self.intent.value!r}"
            ]
        return []


@dataclass(frozen=True)
class ExchangeAnchors:
    t1: float  # start of the speaker's last IPU
    t2: float  # end of the speaker's last IPU
    t3: float  # onset: start of the initiator's first IPU
    t4: float  # end of the initiator's first IPU

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.t1, self.t2, self.t3, self.t4)

    @property
    def overlap(self) -> float:
        return max(0.0, self.t2 - self.t3)


@dataclass(frozen=True)
class Exchange:
    speaker_id: str
    initiator_id: str
    type: ExchangeType
    anchors: ExchangeAnchors
    labels: InterruptionLabels = field(default_factory=InterruptionLabels)
    source: Source = Source.AUTO
    overlap: Optional[float] = None

    def __post_init__(self):
        if self.overlap is None:
            object.__setattr__(self, "overlap", self.anchors.overlap)

    @property
    def t3(self) -> float:
        return self.anchors.t3

    @property
    def first_ipu(self) -> float:
        return self.anchors.t4 - self.anchors.t3

    @property
    def onset_distance(self) -> float:
        return self.anchors.t3 - self.anchors.t1

    def participant_for(self, role: str) -> str:
        if role == "speaker":
            return self.speaker_id
        if role == "initiator":
            return self.initiator_id
        raise ValueError(f"unknown exchange role {role!r}")


@dataclass(frozen=True)
class SessionRecord:
    session_id: str
    participants: tuple[Participant, Participant]
    ipus: dict[str, tuple[Segment, ...]]
    session_length: float
    tracks: dict[tuple[str, str], FeatureTrack] = field(default_factory=dict)
    exchanges: tuple[Exchange, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "participants", tuple(self.participants))
        object.__setattr__(self, "ipus", {pid: tuple(segs) for pid, segs in self.ipus.items()})
        object.__setattr__(self, "exchanges", tuple(self.exchanges))
        object.__setattr__(self, "tracks", dict(self.tracks))

    def participant(self, pid: str) -> Participant:
        for p in self.participants:
            if p.id == pid:
                return p
        raise KeyError(pid)

    def role_of(self, pid: str) -> Role:
        return self.participant(pid).role

    def other(self, pid: str) -> str:
        a, b = self.participants
        return b.id if pid == a.id else a.id

    def replace(self, **changes) -> "SessionRecord":
        fields = dict(
            session_id=self.session_id,
            participants=self.participants,
            ipus=self.ipus,
            session_length=self.session_length,
            tracks=self.tracks,
            exchanges=self.exchanges,
        )
        fields.update(changes)
        return SessionRecord(**fields)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _check_segments(pid, segs, gap_threshold, length, out):
    prev = None
    for i, seg in enumerate(segs):
        name = f"ipu[{pid}][{i}]"
        if seg.participant_id != pid:
            out.append(f"{name}: participant_id {seg.participant_id!r} does not match owner (ownership rule)")
        if not seg.start < seg.end:
            out.append(f"{name}: start {seg.start} must be < end {seg.end} (segment rule)")
        if seg.start < -TIME_EPS or seg.end > length + TIME_EPS:
            out.append(f"{name}: lies outside [0, {length}] (session extent rule)")
        if prev is not None:
            gap = seg.start - prev.end
            if gap < 0:
                out.append(f"{name}: overlaps or precedes ipu[{pid}][{i - 1}] (ordering rule)")
            elif gap < gap_threshold - TIME_EPS:
                out.append(f"{name}: gap {gap:.6f} s to previous IPU is below {gap_threshold} s (IPU gap rule)")
        prev = seg


def validate_session(session: SessionRecord, gap_threshold: float = DEFAULT_IPU_GAP) -> list[str]:
    """Return one human-readable violation per broken invariant (empty if valid)."""
    out: list[str] = []
    sid = session.session_id
    parts = session.participants
    if len(parts) != 2:
        out.append(f"session {sid}: expected exactly 2 participants, got {len(parts)} (dyad rule)")
    else:
        if parts[0].id == parts[1].id:
            out.append(f"session {sid}: participant ids must differ, both are {parts[0].id!r} (participant id rule)")
        if parts[0].role == parts[1].role:
            out.append(
                f"session {sid}: participants {parts[0].id!r} and {parts[1].id!r} both have role "
                f"{parts[0].role.value!r} (role rule)"
            )
    ids = {p.id for p in parts}
    length = session.session_length
    if not (length >= 0 and math.isfinite(length)):
        out.append(f"session {sid}: session_length {length} must be a finite non-negative duration (duration rule)")

    for pid, segs in session.ipus.items():
        if pid not in ids:
            out.append(f"ipu[{pid}]: unknown participant (reference rule)")
        _check_segments(pid, segs, gap_threshold, length, out)

    for key, track in session.tracks.items():
        if track.key != key:
            out.append(f"track{key}: stored under the wrong key {track.key} (track key rule)")
        if track.participant_id not in ids:
            out.append(f"track{key}: unknown participant (reference rule)")

    prev_t3 = -math.inf
    for i, ex in enumerate(session.exchanges):
        name = f"exchange[{i}]"
        if ex.speaker_id == ex.initiator_id:
            out.append(f"{name}: speaker and initiator are both {ex.speaker_id!r} (distinct party rule)")
        for pid in (ex.speaker_id, ex.initiator_id):
            if pid not in ids:
                out.append(f"{name}: unknown participant {pid!r} (reference rule)")
        t1, t2, t3, t4 = ex.anchors.as_tuple()
        if not t1 < t2:
            out.append(f"{name}: t1 {t1} must be < t2 {t2} (anchor rule)")
        if not t3 < t4:
            out.append(f"{name}: t3 {t3} must be < t4 {t4} (anchor rule)")
        if not t1 < t3:
            out.append(f"{name}: t1 {t1} must be < t3 {t3} (anchor rule)")
        if min(t1, t3) < -TIME_EPS or max(t2, t4) > length + TIME_EPS:
            out.append(f"{name}: anchors outside [0, {length}] (session extent rule)")
        if ex.overlap is None or abs(ex.overlap - ex.anchors.overlap) > TIME_EPS:
            out.append(
                f"{name}: stored overlap {ex.overlap} differs from max(0, t2 - t3) = {ex.anchors.overlap} (overlap rule)"
            )
        for problem in ex.labels.problems():
            out.append(f"{name}: {problem} (label consistency rule)")
        if t3 < prev_t3:
            out.append(f"{name}: exchanges must be sorted by t3 (ordering rule)")
        prev_t3 = t3
    return out
