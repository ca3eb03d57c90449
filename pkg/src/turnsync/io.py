"""File formats: feature/segment/annotation CSVs, WAV audio, manifests and exchange tables."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import (
    DEFAULT_SAMPLE_RATE,
    Exchange,
    ExchangeAnchors,
    ExchangeType,
    FeatureTrack,
    InputError,
    Intent,
    IntentDetail,
    InterruptionLabels,
    Outcome,
    Participant,
    Role,
    Segment,
    SessionRecord,
    Source,
)
from .exchange import AnnotationRow

STEP_TOLERANCE = 1e-4


def fmt(x: float) -> str:
    """Shortest representation that round-trips exactly."""
    return repr(float(x)) if math.isfinite(x) else "nan"


def _parse_float(cell: str, row: int, column: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise InputError(f"row {row}, column {column!r}: non-numeric value {cell!r}") from None


def _read_rows(path) -> list[list[str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    except (csv.Error, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: unreadable CSV ({exc})") from None


def _is_header(row: Sequence[str]) -> bool:
    try:
        float(row[0])
    except ValueError:
        return True
    return False


# ---------------------------------------------------------------------------
# Feature tracks
# ---------------------------------------------------------------------------


def load_feature_csv(path, participant_id: str = "") -> list[FeatureTrack]:
    """Read ``time,<feature>,...``; empty cells and ``nan`` are missing samples."""
    rows = _read_rows(path)
    if not rows:
        raise InputError(f"{path}: missing header 'time,<feature>,...'")
    header = [h.strip() for h in rows[0]]
    if header[0] != "time" or len(header) < 2:
        raise InputError(f"{path}: header must start with 'time' followed by feature names")
    names = header[1:]
    times, columns = [], [[] for _ in names]
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise InputError(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
        times.append(_parse_float(row[0], i, "time"))
        for j, cell in enumerate(row[1:]):
            cell = cell.strip()
            columns[j].append(math.nan if cell == "" or cell.lower() == "nan" else _parse_float(cell, i, names[j]))
    rate = DEFAULT_SAMPLE_RATE
    if len(times) >= 2:
        step = times[1] - times[0]
        if step <= 0:
            raise InputError(f"{path}: row 2: time must be strictly increasing")
        for i in range(2, len(times)):
            if abs((times[i] - times[i - 1]) - step) > STEP_TOLERANCE:
                raise InputError(f"{path}: row {i + 1}: non-uniform time step at t={times[i]}")
        rate = round((len(times) - 1) / (times[-1] - times[0]), 6)
    start = times[0] if times else 0.0
    return [FeatureTrack(participant_id, name, col, rate, start) for name, col in zip(names, columns)]


def write_feature_csv(path, tracks: Sequence[FeatureTrack]) -> None:
    if not tracks:
        raise InputError("no tracks to write")
    ref = tracks[0]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time"] + [t.feature_name for t in tracks])
        for i, t in enumerate(ref.times):
            w.writerow([fmt(round(t, 6))] + ["" if math.isnan(tr.values[i]) else fmt(tr.values[i]) for tr in tracks])


# ---------------------------------------------------------------------------
# Segments
# ---------------------------------------------------------------------------


def load_segments_csv(path, participant_id: str = "") -> list[Segment]:
    """Read ``start,end`` rows (header optional), validated sorted and non-overlapping."""
    rows = _read_rows(path)
    if rows and _is_header(rows[0]):
        rows = rows[1:]
    out: list[Segment] = []
    for i, row in enumerate(rows, start=1):
        if len(row) < 2:
            raise InputError(f"{path}: row {i}: expected 'start,end'")
        start = _parse_float(row[0], i, "start")
        end = _parse_float(row[1], i, "end")
        if not start < end:
            raise InputError(f"{path}: row {i}: start {start} must be < end {end}")
        if out and start < out[-1].end:
            raise InputError(f"{path}: row {i}: segment overlaps or precedes row {i - 1}")
        out.append(Segment(participant_id, start, end))
    return out


def write_segments_csv(path, segments: Iterable[Segment]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["start", "end"])
        for s in segments:
            w.writerow([fmt(s.start), fmt(s.end)])


# ---------------------------------------------------------------------------
# Annotations
# ---------------------------------------------------------------------------

ANNOTATION_COLUMNS = ["time", "type", "outcome", "intent", "intent_detail", "initiator_id"]


def _token(enum, cell: str, row: int, column: str, allow_empty=True):
    cell = cell.strip()
    if cell == "" and allow_empty:
        return None
    try:
        return enum(cell)
    except ValueError:
        allowed = ", ".join(e.value for e in enum)
        raise InputError(f"row {row}, column {column!r}: unknown label {cell!r}; allowed: {allowed}") from None


def load_annotations_csv(path) -> list[AnnotationRow]:
    rows = _read_rows(path)
    if rows and _is_header(rows[0]):
        rows = rows[1:]
    out = []
    for i, row in enumerate(rows, start=1):
        row = list(row) + [""] * (len(ANNOTATION_COLUMNS) - len(row))
        time = _parse_float(row[0], i, "time")
        kind = _token(ExchangeType, row[1], i, "type", allow_empty=False)
        outcome = _token(Outcome, row[2], i, "outcome") or Outcome.UNKNOWN
        intent = _token(Intent, row[3], i, "intent") or Intent.UNKNOWN
        detail = _token(IntentDetail, row[4], i, "intent_detail")
        labels = InterruptionLabels(outcome, intent, detail)
        problems = labels.problems()
        if problems:
            raise InputError(f"row {i}: {problems[0]}")
        out.append(AnnotationRow(time, kind, labels, row[5].strip(), i))
    out.sort(key=lambda r: r.time)
    return out


def write_annotations_csv(path, rows: Iterable[AnnotationRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANNOTATION_COLUMNS)
        for r in rows:
            lab = r.labels
            w.writerow([
                fmt(r.time),
                r.type.value,
                "" if lab.outcome is Outcome.UNKNOWN else lab.outcome.value,
                "" if lab.intent is Intent.UNKNOWN else lab.intent.value,
                "" if lab.intent_detail is None else lab.intent_detail.value,
                r.initiator_id,
            ])


# ---------------------------------------------------------------------------
# Exchange tables
# ---------------------------------------------------------------------------

EXCHANGE_COLUMNS = [
    "session_id", "speaker_id", "initiator_id", "type", "outcome", "intent", "intent_detail",
    "t1", "t2", "t3", "t4", "overlap", "source",
]


def write_exchanges_csv(path, sessions: Iterable[SessionRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EXCHANGE_COLUMNS)
        for s in sessions:
            for ex in s.exchanges:
                lab = ex.labels
                w.writerow([
                    s.session_id, ex.speaker_id, ex.initiator_id, ex.type.value, lab.outcome.value,
                    lab.intent.value, "" if lab.intent_detail is None else lab.intent_detail.value,
                    *(fmt(t) for t in ex.anchors.as_tuple()), fmt(ex.overlap), ex.source.value,
                ])


def read_exchanges_csv(path) -> dict[str, list[Exchange]]:
    rows = _read_rows(path)
    if not rows or rows[0] != EXCHANGE_COLUMNS:
        raise InputError(f"{path}: header must be {','.join(EXCHANGE_COLUMNS)}")
    out: dict[str, list[Exchange]] = {}
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(EXCHANGE_COLUMNS):
            raise InputError(f"{path}: row {i} has {len(row)} cells, expected {len(EXCHANGE_COLUMNS)}")
        rec = dict(zip(EXCHANGE_COLUMNS, row))
        labels = InterruptionLabels(
            _token(Outcome, rec["outcome"], i, "outcome") or Outcome.UNKNOWN,
            _token(Intent, rec["intent"], i, "intent") or Intent.UNKNOWN,
            _token(IntentDetail, rec["intent_detail"], i, "intent_detail"),
        )
        if labels.problems():
            raise InputError(f"{path}: row {i}: {labels.problems()[0]}")
        anchors = ExchangeAnchors(*(_parse_float(rec[k], i, k) for k in ("t1", "t2", "t3", "t4")))
        ex = Exchange(
            rec["speaker_id"], rec["initiator_id"], _token(ExchangeType, rec["type"], i, "type", False),
            anchors, labels, _token(Source, rec["source"], i, "source", False),
            _parse_float(rec["overlap"], i, "overlap"),
        )
        out.setdefault(rec["session_id"], []).append(ex)
    return out


# ---------------------------------------------------------------------------
# Audio
# ---------------------------------------------------------------------------


def read_wav(path) -> tuple[np.ndarray, int]:
    """Mono PCM16/PCM32/float WAV as float samples in [-1, 1] and the sample rate."""
    from scipy.io import wavfile

    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError) as exc:
        raise InputError(f"{path}: cannot read WAV ({exc})") from None
    if data.ndim != 1:
        raise InputError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:
        x = data / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(float) - 128.0) / 128.0
    else:
        x = data.astype(float)
    return x, int(rate)


def write_wav(path, samples: np.ndarray, rate: int) -> None:
    from scipy.io import wavfile

    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, rate, pcm)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParticipantEntry:
    id: str
    role: Role
    audio_path: Optional[Path] = None
    vad_path: Optional[Path] = None
    feature_csv_paths: tuple[Path, ...] = ()


@dataclass(frozen=True)
class SessionManifest:
    session_id: str
    participants: tuple[ParticipantEntry, ParticipantEntry]
    annotations_path: Optional[Path] = None
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE
    session_length: Optional[float] = None
    path: Optional[Path] = field(default=None, compare=False)


def load_manifest(path) -> SessionManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: cannot read manifest ({exc})") from None
    base = path.parent

    def resolve(p):
        return None if p in (None, "") else (base / p)

    try:
        entries = []
        for i, p in enumerate(raw["participants"]):
            entry = ParticipantEntry(
                str(p["id"]),
                Role(p["role"]),
                resolve(p.get("audio_path")),
                resolve(p.get("vad_path")),
                tuple(resolve(f) for f in p.get("feature_csv_paths", [])),
            )
            if entry.audio_path is None and entry.vad_path is None:
                raise InputError(f"{path}: participant {i} needs audio_path or vad_path")
            entries.append(entry)
        if len(entries) != 2:
            raise InputError(f"{path}: a session has exactly two participants")
        return SessionManifest(
            str(raw["session_id"]),
            tuple(entries),
            resolve(raw.get("annotations_path")),
            float(raw.get("sample_rate_hz", DEFAULT_SAMPLE_RATE)),
            raw.get("session_length"),
            path,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"{path}: malformed manifest ({exc!r})") from None


def manifest_to_dict(m: SessionManifest, relative_to: Optional[Path] = None) -> dict:
    def rel(p):
        if p is None:
            return None
        return str(Path(p).relative_to(relative_to)) if relative_to else str(p)

    out = {
        "session_id": m.session_id,
        "sample_rate_hz": m.sample_rate_hz,
        "participants": [
            {
                "id": p.id,
                "role": p.role.value,
                "audio_path": rel(p.audio_path),
                "vad_path": rel(p.vad_path),
                "feature_csv_paths": [rel(f) for f in p.feature_csv_paths],
            }
            for p in m.participants
        ],
        "annotations_path": rel(m.annotations_path),
    }
    if m.session_length is not None:
        out["session_length"] = m.session_length
    return out


# ---------------------------------------------------------------------------
# Session records as JSON
# ---------------------------------------------------------------------------


def _num(x: float):
    return None if math.isnan(x) else x


def session_to_dict(s: SessionRecord) -> dict:
    return {
        "session_id": s.session_id,
        "session_length": s.session_length,
        "participants": [{"id": p.id, "role": p.role.value} for p in s.participants],
        "ipus": {pid: [[seg.start, seg.end] for seg in segs] for pid, segs in s.ipus.items()},
        "tracks": [
            {
                "participant_id": t.participant_id,
                "feature_name": t.feature_name,
                "sample_rate_hz": t.sample_rate_hz,
                "start_time": t.start_time,
                "values": [_num(v) for v in t.values.tolist()],
            }
            for t in s.tracks.values()
        ],
        "exchanges": [
            {
                "speaker_id": ex.speaker_id,
                "initiator_id": ex.initiator_id,
                "type": ex.type.value,
                "anchors": list(ex.anchors.as_tuple()),
                "overlap": ex.overlap,
                "outcome": ex.labels.outcome.value,
                "intent": ex.labels.intent.value,
                "intent_detail": None if ex.labels.intent_detail is None else ex.labels.intent_detail.value,
                "source": ex.source.value,
            }
            for ex in s.exchanges
        ],
    }


def session_from_dict(d: dict) -> SessionRecord:
    tracks = {}
    for t in d.get("tracks", []):
        values = [math.nan if v is None else v for v in t["values"]]
        tr = FeatureTrack(t["participant_id"], t["feature_name"], values, t["sample_rate_hz"], t["start_time"])
        tracks[tr.key] = tr
    exchanges = [
        Exchange(
            e["speaker_id"],
            e["initiator_id"],
            ExchangeType(e["type"]),
            ExchangeAnchors(*e["anchors"]),
            InterruptionLabels(
                Outcome(e["outcome"]),
                Intent(e["intent"]),
                None if e["intent_detail"] is None else IntentDetail(e["intent_detail"]),
            ),
            Source(e["source"]),
            e["overlap"],
        )
        for e in d.get("exchanges", [])
    ]
    return SessionRecord(
        d["session_id"],
        tuple(Participant(p["id"], Role(p["role"])) for p in d["participants"]),
        {pid: [Segment(pid, a, b) for a, b in segs] for pid, segs in d["ipus"].items()},
        d["session_length"],
        tracks,
        exchanges,
    )
