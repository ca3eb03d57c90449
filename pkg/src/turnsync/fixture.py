"""Deterministic synthetic dyads with known exchange labels.

Each scripted exchange is laid out as an isolated episode: the floor holder
produces a fresh IPU and the listener reacts with the timing pattern of the
requested type.  Episodes are separated by pauses so exactly one switch
candidate arises per episode under the given classifier parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    DEFAULT_IPU_GAP,
    DEFAULT_SAMPLE_RATE,
    FEATURES,
    ExchangeType,
    FeatureTrack,
    InfeasibleError,
    Intent,
    IntentDetail,
    InterruptionLabels,
    InvariantError,
    Outcome,
    Participant,
    Role,
    Segment,
    SessionRecord,
)
from .exchange import AnnotationRow, ClassifierParams, classify_ipus

QUANTUM = 1e-3  # all generated times are whole milliseconds

COOPERATIVE = (IntentDetail.AGREEMENT, IntentDetail.CLARIFICATION, IntentDetail.ASSISTANCE)
COMPETITIVE = (
    IntentDetail.DISAGREEMENT,
    IntentDetail.FLOOR_TAKING,
    IntentDetail.TOPIC_CHANGE,
    IntentDetail.TANGENTIALIZATION,
)

SMOOTH = "smooth"
BACKCHANNEL = "backchannel"
SUCCESSFUL = "interruption"
FAILED = "interruption_failed"


@dataclass(frozen=True)
class Span:
    """Uniform distribution on ``[low, high]`` seconds."""

    low: float
    high: float

    @property
    def mean(self) -> float:
        return 0.5 * (self.low + self.high)


@dataclass(frozen=True)
class Effect:
    """Additive shift on one role's track during its interval (taken for the speaker, taker for the initiator)."""

    exchange_type: ExchangeType
    role: str
    feature: str
    shift: float


def _default_overlap():
    return {SMOOTH: Span(0.1, 0.45), BACKCHANNEL: Span(1.0, 3.0), SUCCESSFUL: Span(0.8, 1.5), FAILED: Span(1.6, 3.0)}


def _default_first_ipu():
    return {SMOOTH: Span(2.5, 6.1), BACKCHANNEL: Span(0.2, 0.8), SUCCESSFUL: Span(1.6, 5.0), FAILED: Span(1.05, 1.5)}


def _span(v) -> Span:
    return v if isinstance(v, Span) else Span(*v)


@dataclass(frozen=True)
class FixtureSpec:
    seed: int = 0
    n_sessions: int = 1
    counts: dict = field(default_factory=lambda: {SMOOTH: 10, BACKCHANNEL: 5, "interruption": 5})
    successful_share: float = 0.8
    cooperative_share: float = 0.5
    smooth_overlap_share: float = 0.3
    overlap: dict = field(default_factory=_default_overlap)
    first_ipu: dict = field(default_factory=_default_first_ipu)
    speaker_ipu: Span = Span(3.5, 7.5)
    gap: Span = Span(0.1, 0.6)
    pause: Span = Span(0.4, 1.2)
    features: tuple = FEATURES
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE
    noise_sd: float = 1.0
    dropout: float = 0.0
    effects: tuple = ()
    classifier: ClassifierParams = ClassifierParams()

    def __post_init__(self):
        # partial range tables extend the defaults; pairs become Spans
        for key, default in (("overlap", _default_overlap), ("first_ipu", _default_first_ipu)):
            merged = default()
            merged.update({k: _span(v) for k, v in getattr(self, key).items()})
            object.__setattr__(self, key, merged)
        for key in ("speaker_ipu", "gap", "pause"):
            object.__setattr__(self, key, _span(getattr(self, key)))

    @classmethod
    def from_dict(cls, raw: dict) -> "FixtureSpec":
        raw = dict(raw)
        if "effects" in raw:
            raw["effects"] = tuple(
                Effect(ExchangeType(e["exchange_type"]), e["role"], e["feature"], float(e["shift"])) for e in raw["effects"]
            )
        if "features" in raw:
            raw["features"] = tuple(raw["features"])
        if "classifier" in raw:
            raw["classifier"] = ClassifierParams(**raw["classifier"])
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise InfeasibleError(f"unknown fixture spec fields: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["overlap"] = {k: [v.low, v.high] for k, v in self.overlap.items()}
        out["first_ipu"] = {k: [v.low, v.high] for k, v in self.first_ipu.items()}
        for key in ("speaker_ipu", "gap", "pause"):
            span = getattr(self, key)
            out[key] = [span.low, span.high]
        out["effects"] = [
            {"exchange_type": e.exchange_type.value, "role": e.role, "feature": e.feature, "shift": e.shift}
            for e in self.effects
        ]
        out["features"] = list(self.features)
        return out


@dataclass(frozen=True)
class Fixture:
    spec: FixtureSpec
    sessions: tuple[SessionRecord, ...]
    ground_truth: dict  # session_id -> list[AnnotationRow]


# ---------------------------------------------------------------------------
# Feasibility
# ---------------------------------------------------------------------------


def _episode_counts(spec: FixtureSpec) -> dict[str, int]:
    n_int = int(spec.counts.get("interruption", 0))
    n_succ = int(round(spec.successful_share * n_int))
    return {
        SMOOTH: int(spec.counts.get(SMOOTH, 0)),
        BACKCHANNEL: int(spec.counts.get(BACKCHANNEL, 0)),
        SUCCESSFUL: n_succ,
        FAILED: n_int - n_succ,
    }


def check_feasible(spec: FixtureSpec) -> None:
    """Raise InfeasibleError if the timing ranges contradict the classification rules."""
    p = spec.classifier
    q = QUANTUM
    problems = []
    unknown = set(spec.counts) - {SMOOTH, BACKCHANNEL, "interruption"}
    if unknown:
        problems.append(f"unknown exchange types in counts: {sorted(unknown)}")
    if spec.n_sessions < 1:
        problems.append("n_sessions must be >= 1")
    if any(v < 0 for v in spec.counts.values()):
        problems.append("counts must be non-negative")
    for name in ("successful_share", "cooperative_share", "smooth_overlap_share"):
        if not 0 <= getattr(spec, name) <= 1:
            problems.append(f"{name} must lie in [0, 1]")
    if not 0 <= spec.dropout < 1:
        problems.append("dropout must lie in [0, 1)")
    spans = {"speaker_ipu": spec.speaker_ipu, "gap": spec.gap, "pause": spec.pause}
    spans.update({f"overlap[{k}]": v for k, v in spec.overlap.items()})
    spans.update({f"first_ipu[{k}]": v for k, v in spec.first_ipu.items()})
    for name, span in spans.items():
        if not 0 <= span.low <= span.high:
            problems.append(f"{name}: need 0 <= low <= high, got {span}")
    if spec.pause.low < DEFAULT_IPU_GAP + q:
        problems.append(f"pause.low {spec.pause.low} must exceed the IPU gap {DEFAULT_IPU_GAP} s")

    counts = _episode_counts(spec)
    ov, fi, spk = spec.overlap, spec.first_ipu, spec.speaker_ipu
    for cat in (c for c, n in counts.items() if n):
        if cat not in ov or cat not in fi:
            problems.append(f"{cat}: missing overlap/first_ipu range")
            continue
        o, d = ov[cat], fi[cat]
        if spk.low <= o.high + q:
            problems.append(f"{cat}: speaker IPU low {spk.low} must exceed overlap high {o.high} (t1 < t3)")
        if cat == SMOOTH:
            if spec.smooth_overlap_share > 0 and not (o.low >= q and o.high <= p.smooth_tail_overlap):
                problems.append(
                    f"smooth: overlap range {o} must lie in (0, smooth_tail_overlap={p.smooth_tail_overlap}]"
                )
            if d.low <= p.backchannel_max_dur + q:
                problems.append(f"smooth: first IPU low {d.low} must exceed backchannel_max_dur {p.backchannel_max_dur}")
        elif cat == BACKCHANNEL:
            if d.high > p.backchannel_max_dur:
                problems.append(f"backchannel: first IPU high {d.high} exceeds backchannel_max_dur {p.backchannel_max_dur}")
            if o.low <= d.high + q:
                problems.append(f"backchannel: overlap low {o.low} must exceed first IPU high {d.high} (speaker keeps talking)")
            if d.low < q:
                problems.append("backchannel: first IPU must be positive")
        elif cat == SUCCESSFUL:
            if o.low <= p.smooth_tail_overlap + q:
                problems.append(
                    f"interruption: overlap low {o.low} must exceed smooth_tail_overlap {p.smooth_tail_overlap}"
                )
            if d.low <= o.high + q:
                problems.append(f"interruption: first IPU low {d.low} must exceed overlap high {o.high} (speaker yields)")
        elif cat == FAILED:
            if d.low <= p.backchannel_max_dur + q:
                problems.append(
                    f"interruption_failed: first IPU low {d.low} must exceed backchannel_max_dur {p.backchannel_max_dur}"
                )
            if o.low <= max(d.high, p.smooth_tail_overlap) + q:
                problems.append(
                    f"interruption_failed: overlap low {o.low} must exceed first IPU high {d.high} "
                    f"and smooth_tail_overlap {p.smooth_tail_overlap} (speaker keeps talking)"
                )
    if problems:
        raise InfeasibleError("infeasible fixture spec: " + "; ".join(problems))


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def _q(t: float) -> float:
    return round(round(t / QUANTUM) * QUANTUM, 3)


def _draw(rng, span: Span) -> float:
    return _q(rng.uniform(span.low, span.high))


def _flags(rng, n: int, share: float) -> list[bool]:
    k = int(round(share * n))
    flags = [True] * k + [False] * (n - k)
    rng.shuffle(flags)
    return flags


def _episodes(spec: FixtureSpec, rng) -> list[tuple]:
    counts = _episode_counts(spec)
    smooth_overlap = _flags(rng, counts[SMOOTH], spec.smooth_overlap_share)
    n_int = counts[SUCCESSFUL] + counts[FAILED]
    coop = _flags(rng, n_int, spec.cooperative_share)
    eps = []
    for i in range(counts[SMOOTH]):
        eps.append((SMOOTH, smooth_overlap[i], None))
    eps.extend((BACKCHANNEL, True, None) for _ in range(counts[BACKCHANNEL]))
    for i in range(n_int):
        cat = SUCCESSFUL if i < counts[SUCCESSFUL] else FAILED
        eps.append((cat, True, coop[i]))
    order = rng.permutation(len(eps))
    return [eps[i] for i in order]


def _layout(session_id, episodes, spec: FixtureSpec, rng):
    p1, p2 = Participant(f"{session_id}-A", Role.EXPERT), Participant(f"{session_id}-B", Role.NOVICE)
    ipus = {p1.id: [], p2.id: []}
    truth = []
    intervals = []  # (exchange type, speaker, initiator, t1, t2, t3, t4)
    floor, other = p1.id, p2.id
    t = _draw(rng, spec.pause)
    for cat, overlapped, cooperative in episodes:
        spk, lis = floor, other
        t1 = t
        t2 = _q(t1 + _draw(rng, spec.speaker_ipu))
        overlap = _draw(rng, spec.overlap[cat]) if overlapped else 0.0
        t3 = _q(t2 - overlap) if overlapped else _q(t2 + _draw(rng, spec.gap))
        t4 = _q(t3 + _draw(rng, spec.first_ipu[cat]))
        ipus[spk].append(Segment(spk, t1, t2))
        ipus[lis].append(Segment(lis, t3, t4))
        labels = InterruptionLabels()
        kind = ExchangeType.SMOOTH_TURN if cat == SMOOTH else ExchangeType.BACKCHANNEL
        if cat in (SUCCESSFUL, FAILED):
            kind = ExchangeType.INTERRUPTION
            pool = COOPERATIVE if cooperative else COMPETITIVE
            detail = pool[int(rng.integers(len(pool)))]
            labels = InterruptionLabels(
                Outcome.SUCCESSFUL if cat == SUCCESSFUL else Outcome.FAILED,
                Intent.COOPERATIVE if cooperative else Intent.COMPETITIVE,
                detail,
            )
        truth.append(AnnotationRow(t3, kind, labels, lis, len(truth) + 1))
        intervals.append((kind, spk, lis, t1, t2, t3, t4))
        if cat in (SMOOTH, SUCCESSFUL):
            floor, other = lis, spk
        t = _q(max(t2, t4) + _draw(rng, spec.pause))
    length = t
    return (p1, p2), ipus, truth, intervals, length


def _tracks(participants, intervals, length, spec: FixtureSpec, rng):
    rate = spec.sample_rate_hz
    n = int(math.ceil(length * rate))
    times = np.arange(n) / rate
    tracks = {}
    for p in participants:
        for feature in spec.features:
            values = rng.normal(0.0, spec.noise_sd, n) if spec.noise_sd > 0 else np.zeros(n)
            for kind, spk, lis, t1, t2, t3, t4 in intervals:
                for eff in spec.effects:
                    if eff.exchange_type is not kind or eff.feature != feature:
                        continue
                    if eff.role == "initiator" and lis == p.id:
                        values[(times >= t3 - 1e-6) & (times < t4 - 1e-6)] += eff.shift
                    elif eff.role == "speaker" and spk == p.id:
                        values[(times >= t1 - 1e-6) & (times < t2 - 1e-6)] += eff.shift
            if spec.dropout > 0:
                values[rng.random(n) < spec.dropout] = np.nan
            tracks[(p.id, feature)] = FeatureTrack(p.id, feature, values, rate, 0.0)
    return tracks


def _verify(session: SessionRecord, truth, params: ClassifierParams) -> None:
    found = classify_ipus(session.ipus, params)
    if len(found) != len(truth):
        raise InvariantError(
            f"fixture {session.session_id}: layout produced {len(found)} switch candidates for {len(truth)} episodes"
        )
    for ex, row in zip(found, truth):
        same = ex.type is row.type and abs(ex.t3 - row.time) < 1e-9 and ex.initiator_id == row.initiator_id
        if same and ex.type is ExchangeType.INTERRUPTION:
            same = ex.labels.outcome is row.labels.outcome
        if not same:
            raise InvariantError(f"fixture {session.session_id}: episode at t3={row.time} classified as {ex.type.value}")


def generate_fixture(spec: FixtureSpec = FixtureSpec()) -> Fixture:
    """Build sessions whose IPUs realise exactly ``spec.counts`` under ``spec.classifier``."""
    check_feasible(spec)
    rng = np.random.default_rng(spec.seed)
    episodes = _episodes(spec, rng)
    width = max(2, len(str(spec.n_sessions)))
    sessions, truth = [], {}
    for k in range(spec.n_sessions):
        sid = f"S{k + 1:0{width}d}"
        srng = np.random.default_rng([spec.seed, k + 1])
        mine = episodes[k::spec.n_sessions]
        participants, ipus, rows, intervals, length = _layout(sid, mine, spec, srng)
        tracks = _tracks(participants, intervals, length, spec, srng)
        session = SessionRecord(sid, participants, ipus, length, tracks)
        _verify(session, rows, spec.classifier)
        sessions.append(session)
        truth[sid] = rows
    return Fixture(spec, tuple(sessions), truth)


def write_fixture(fixture: Fixture, out_dir, with_annotations: bool = False) -> list[Path]:
    """Write per-session VAD/feature/ground-truth CSVs plus a manifest; returns manifest paths."""
    from .io import (
        ParticipantEntry,
        SessionManifest,
        manifest_to_dict,
        write_annotations_csv,
        write_feature_csv,
        write_segments_csv,
    )

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "fixture_spec.json").write_text(json.dumps(fixture.spec.to_dict(), indent=2, sort_keys=True) + "\n")
    manifests = []
    for session in fixture.sessions:
        sdir = out_dir / session.session_id
        sdir.mkdir(exist_ok=True)
        entries = []
        for p in session.participants:
            vad = sdir / f"{p.id}_vad.csv"
            write_segments_csv(vad, session.ipus[p.id])
            feats = []
            tracks = [t for (pid, _), t in session.tracks.items() if pid == p.id]
            if tracks:
                fpath = sdir / f"{p.id}_features.csv"
                write_feature_csv(fpath, tracks)
                feats.append(fpath)
            entries.append(ParticipantEntry(p.id, p.role, None, vad, tuple(feats)))
        truth_path = sdir / "ground_truth.csv"
        write_annotations_csv(truth_path, fixture.ground_truth[session.session_id])
        manifest = SessionManifest(
            session.session_id,
            tuple(entries),
            truth_path if with_annotations else None,
            fixture.spec.sample_rate_hz,
            session.session_length,
        )
        mpath = sdir / "manifest.json"
        mpath.write_text(json.dumps(manifest_to_dict(manifest, relative_to=sdir), indent=2, sort_keys=True) + "\n")
        manifests.append(mpath)
    return manifests


def spec_from_json(path: Optional[str]) -> FixtureSpec:
    if path is None:
        return FixtureSpec()
    return FixtureSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
