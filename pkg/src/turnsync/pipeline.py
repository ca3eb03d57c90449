"""End-to-end analysis: manifests in, report/exchange table/curve CSVs out."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .core import (
    DEFAULT_IPU_GAP,
    ExchangeType,
    FeatureTrack,
    InputError,
    Participant,
    SessionRecord,
    TurnsyncError,
    validate_session,
)
from .exchange import ClassifierParams, apply_annotations, classify_ipus, exchange_census
from .io import load_annotations_csv, load_feature_csv, load_manifest, load_segments_csv, read_wav, write_exchanges_csv
from .segmentation import VadParams, energy_vad, merge_to_ipus
from .stats import (
    ROLES,
    align_to_onsets,
    aligned_average_curves,
    feature_comparison,
    normalize_track,
    resample_track,
    role_stats,
    timing_stats,
)
from .synchrony import Measure, SyncParams, sliding_synchrony

SECTIONS = ("classify", "stats", "curves", "sync")


class StageError(TurnsyncError):
    """A pipeline stage failed; carries the stage name, the input locus and the cause's exit code."""

    def __init__(self, stage: str, locus: str, cause: Exception):
        super().__init__(f"[{stage}] {locus}: {cause}")
        self.stage = stage
        self.locus = locus
        self.exit_code = getattr(cause, "exit_code", 1)

    def __reduce__(self):
        return (_rebuild_stage_error, (self.stage, self.locus, str(self).split(": ", 1)[-1], self.exit_code))


def _rebuild_stage_error(stage, locus, message, exit_code):
    err = StageError(stage, locus, InputError(message))
    err.exit_code = exit_code
    return err


@dataclass(frozen=True)
class PipelineParams:
    vad: VadParams = VadParams()
    ipu_gap: float = DEFAULT_IPU_GAP
    classifier: ClassifierParams = ClassifierParams()
    annotation_tolerance: float = 0.5
    measures: tuple = ("PCC", "TLCC", "DTW")
    sync_window: float = 4.0
    sync_max_lag: float = 4.0
    sync_hop: int = 1
    dtw_band: Optional[int] = None
    sync_features: Optional[tuple] = ("AU01", "AU02", "AU04", "AU06", "AU12")
    curve_before: float = 10.0
    curve_after: float = 10.0
    alpha: float = 0.05
    normalize: bool = True

    def sync_params(self, measure) -> SyncParams:
        return SyncParams(Measure(measure), self.sync_max_lag, self.sync_window, self.sync_hop, self.dtw_band)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["measures"] = list(self.measures)
        out["sync_features"] = None if self.sync_features is None else list(self.sync_features)
        out["conventions"] = {
            "t_test": "welch (unequal variance), two-sided",
            "normalization": "z-score per (session, participant, feature), population std",
            "intervals": "half-open [start, end)",
            "curve_alignment": "offset 0 = first 25 fps frame at or after t3; samples outside [t1, t4) masked",
            "dtw": "normalised distance (lower = more synchronous)",
            "tlcc": "max over lags of windowed PCC; track_b windows shifted by each lag",
        }
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineParams":
        raw = dict(raw or {})
        raw.pop("conventions", None)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise InputError(f"unknown pipeline parameters: {sorted(unknown)}")
        if "vad" in raw:
            raw["vad"] = VadParams(**raw["vad"])
        if "classifier" in raw:
            raw["classifier"] = ClassifierParams(**raw["classifier"])
        for key in ("measures", "sync_features"):
            if raw.get(key) is not None:
                raw[key] = tuple(raw[key])
        return cls(**raw)


@dataclass
class SessionResult:
    raw: SessionRecord
    normalized: SessionRecord
    sync: dict = field(default_factory=dict)  # (measure, feature) -> FeatureTrack
    violations: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Per-session work
# ---------------------------------------------------------------------------


def manifest_paths(paths: Iterable) -> list[Path]:
    """Expand directories to the ``manifest.json`` files beneath them."""
    out = []
    for p in paths:
        p = Path(p)
        out.extend(sorted(p.rglob("manifest.json")) if p.is_dir() else [p])
    if not out:
        raise InputError("no session manifests given")
    return out


def ingest_session(manifest_path, params: PipelineParams) -> tuple[SessionRecord, list]:
    try:
        manifest = load_manifest(manifest_path)
    except TurnsyncError as exc:
        raise StageError("ingest", str(manifest_path), exc) from exc
    ipus, tracks, extents = {}, {}, []
    for entry in manifest.participants:
        locus = f"{manifest.session_id}/{entry.id}"
        try:
            if entry.vad_path is not None:
                vad = load_segments_csv(entry.vad_path, entry.id)
            else:
                samples, rate = read_wav(entry.audio_path)
                extents.append(len(samples) / rate)
                vad = energy_vad(samples, rate, params.vad, entry.id)
        except (TurnsyncError, OSError) as exc:
            raise StageError("vad", locus, exc) from exc
        try:
            ipus[entry.id] = merge_to_ipus(vad, params.ipu_gap)
        except TurnsyncError as exc:
            raise StageError("segment", locus, exc) from exc
        for fpath in entry.feature_csv_paths:
            try:
                for track in load_feature_csv(fpath, entry.id):
                    tracks[track.key] = track
                    extents.append(track.end_time)
            except (TurnsyncError, OSError) as exc:
                raise StageError("ingest", str(fpath), exc) from exc
    for segs in ipus.values():
        if segs:
            extents.append(segs[-1].end)
    length = manifest.session_length if manifest.session_length is not None else max(extents, default=0.0)
    participants = tuple(Participant(e.id, e.role) for e in manifest.participants)
    session = SessionRecord(manifest.session_id, participants, ipus, float(length), tracks)
    annotations = []
    if manifest.annotations_path is not None:
        try:
            annotations = load_annotations_csv(manifest.annotations_path)
        except (TurnsyncError, OSError) as exc:
            raise StageError("ingest", str(manifest.annotations_path), exc) from exc
    return session, annotations


def _normalized(session: SessionRecord) -> SessionRecord:
    tracks = {}
    for key, track in session.tracks.items():
        try:
            tracks[key] = normalize_track(track)
        except InputError:
            tracks[key] = track.with_values(np.full(len(track.values), np.nan))
    return session.replace(tracks=tracks)


def _common_grid(ta: FeatureTrack, tb: FeatureTrack) -> tuple[FeatureTrack, FeatureTrack]:
    ta, tb = resample_track(ta), resample_track(tb)
    start = max(ta.start_time, tb.start_time)
    rate = ta.sample_rate_hz

    def crop(t):
        skip = int(round((start - t.start_time) * rate))
        return t.values[skip:]

    va, vb = crop(ta), crop(tb)
    n = min(len(va), len(vb))
    return (
        FeatureTrack(ta.participant_id, ta.feature_name, va[:n], rate, start),
        FeatureTrack(tb.participant_id, ta.feature_name, vb[:n], rate, start),
    )


def session_sync(session: SessionRecord, params: PipelineParams) -> dict:
    a, b = (p.id for p in session.participants)
    shared = sorted({f for pid, f in session.tracks if pid == a} & {f for pid, f in session.tracks if pid == b})
    if params.sync_features is not None:
        shared = [f for f in shared if f in params.sync_features]
    out = {}
    for feature in shared:
        ta, tb = _common_grid(session.tracks[(a, feature)], session.tracks[(b, feature)])
        for measure in params.measures:
            curve = sliding_synchrony(ta, tb, params.sync_params(measure))
            out[(Measure(measure).value, feature)] = curve.as_track()
    return out


def process_session(manifest_path, params: PipelineParams, sections: Sequence[str] = SECTIONS) -> SessionResult:
    manifest_path = Path(manifest_path)
    session, annotations = ingest_session(manifest_path, params)
    sid = session.session_id
    try:
        exchanges = classify_ipus(session.ipus, params.classifier)
    except TurnsyncError as exc:
        raise StageError("classify", sid, exc) from exc
    if annotations:
        try:
            exchanges = apply_annotations(exchanges, annotations, params.annotation_tolerance, session.ipus)
        except TurnsyncError as exc:
            raise StageError("annotate", sid, exc) from exc
    session = session.replace(exchanges=exchanges)
    violations = validate_session(session, params.ipu_gap)
    normalized = _normalized(session) if params.normalize else session
    sync = {}
    if "sync" in sections:
        try:
            sync = session_sync(normalized, params)
        except TurnsyncError as exc:
            raise StageError("sync", sid, exc) from exc
    return SessionResult(session, normalized, sync, violations)


# ---------------------------------------------------------------------------
# Corpus-level reduction and output
# ---------------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def write_curve_csv(path: Path, offsets, means, support) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["offset", "mean", "support"])
        for k, m, s in zip(offsets, means, support):
            w.writerow([int(k), "" if math.isnan(m) else repr(float(m)), int(s)])


def _features(sessions: Sequence[SessionRecord]) -> list[str]:
    return sorted({f for s in sessions for (_, f) in s.tracks})


def run_pipeline(
    manifests: Iterable,
    params: PipelineParams = PipelineParams(),
    out_dir=None,
    jobs: int = 1,
    sections: Sequence[str] = SECTIONS,
) -> dict:
    """Run ingest through synchrony curves; write outputs under ``out_dir`` when given."""
    paths = manifest_paths(manifests)
    if jobs > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(process_session, paths, [params] * len(paths), [tuple(sections)] * len(paths)))
    else:
        results = [process_session(p, params, sections) for p in paths]
    results.sort(key=lambda r: r.raw.session_id)
    ids = [r.raw.session_id for r in results]
    if len(set(ids)) != len(ids):
        raise StageError("ingest", "manifests", InputError("duplicate session ids"))
    raw = [r.raw for r in results]
    norm = [r.normalized for r in results]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    report = {
        "version": __version__,
        "parameters": params.to_dict(),
        "sessions": [
            {
                "session_id": s.session_id,
                "session_length": s.session_length,
                "participants": {p.id: p.role.value for p in s.participants},
                "n_exchanges": len(s.exchanges),
                "violations": r.violations,
            }
            for s, r in zip(raw, results)
        ],
    }
    if out is not None and "classify" in sections:
        write_exchanges_csv(out / "exchanges.csv", raw)
        report["exchanges_file"] = "exchanges.csv"

    features = _features(raw)
    if "stats" in sections:
        report["census"] = exchange_census(raw)
        report["timing"] = timing_stats(raw)
        report["roles"] = role_stats(raw)
        if features:
            report["feature_comparison"] = {
                "normalized": feature_comparison(norm, features, params.alpha),
                "raw": feature_comparison(raw, features, params.alpha),
            }
        else:
            report["feature_comparison"] = "absent"

    if "curves" in sections:
        index = []
        for feature in features:
            for kind in ExchangeType:
                for role in ROLES:
                    curve = aligned_average_curves(norm, feature, role, kind, params.curve_before, params.curve_after)
                    if not len(curve.frame_offsets):
                        continue
                    name = f"curves/{feature}_{kind.value}_{role}.csv"
                    if out is not None:
                        write_curve_csv(out / name, curve.frame_offsets, curve.mean_values, curve.support_counts)
                    index.append(name)
        report["curves"] = index if features else "absent"

    if "sync" in sections:
        index = []
        keys = sorted({k for r in results for k in r.sync})
        for measure, feature in keys:
            for kind in ExchangeType:
                pairs = [
                    (r.sync[(measure, feature)], ex)
                    for r in results
                    if (measure, feature) in r.sync
                    for ex in r.raw.exchanges
                    if ex.type is kind
                ]
                if not pairs:
                    continue
                offsets, mean, support = align_to_onsets(pairs, params.curve_before, params.curve_after)
                name = f"sync/{measure}_{feature}_{kind.value}.csv"
                if out is not None:
                    write_curve_csv(out / name, offsets, mean, support)
                index.append(name)
        report["sync"] = index if keys else "absent"

    report = _clean(report)
    if out is not None:
        text = json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"
        (out / "report.json").write_text(text, encoding="utf-8")
    return report
