"""Classification of switch candidates and merging of manual annotations."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .core import (
    TIME_EPS,
    Exchange,
    ExchangeAnchors,
    ExchangeType,
    InfeasibleError,
    InputError,
    Intent,
    IntentDetail,
    InterruptionLabels,
    Outcome,
    Segment,
    SessionRecord,
    Source,
)
from .segmentation import SwitchCandidate, detect_switch_candidates, floor_holder

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassifierParams:
    backchannel_max_dur: float = 1.0
    backchannel_resume_gap: float = 1.0
    smooth_tail_overlap: float = 0.5
    success_hold: float = 0.0

    def __post_init__(self):
        for name in ("backchannel_max_dur", "backchannel_resume_gap", "smooth_tail_overlap", "success_hold"):
            if getattr(self, name) < 0:
                raise InfeasibleError(f"ClassifierParams.{name} must be >= 0")


def _next_after(segs: Sequence[Segment], after: Segment) -> Optional[Segment]:
    for seg in segs:
        if seg.start > after.start:
            return seg
    return None


def _resume_ipu(spk: Sequence[Segment], last: Segment, t4: float) -> Optional[Segment]:
    """First later speaker IPU still running at ``t4``; IPUs nested inside the listener's are skipped."""
    for seg in spk:
        if seg.start > last.start and seg.end > t4 + TIME_EPS:
            return seg
    return None


def _resolve(candidate: SwitchCandidate, ipus: Mapping[str, Sequence[Segment]]):
    try:
        spk = list(ipus[candidate.speaker_id])
        ini = list(ipus[candidate.initiator_id])
    except KeyError as exc:
        raise InputError(f"stale candidate: unknown participant {exc.args[0]!r}") from None
    if candidate.speaker_last_ipu not in spk or candidate.initiator_first_ipu not in ini:
        raise InputError(f"stale candidate at onset {candidate.onset}: IPUs not found in the given sequences")
    return spk, ini


def rule_flags(
    candidate: SwitchCandidate, ipus: Mapping[str, Sequence[Segment]], params: ClassifierParams = ClassifierParams()
) -> dict[str, bool]:
    """Evaluate the backchannel, smooth-turn and interruption predicates independently."""
    spk, ini = _resolve(candidate, ipus)
    last, first = candidate.speaker_last_ipu, candidate.initiator_first_ipu
    t2, t3, t4 = last.end, first.start, first.end
    overlap = max(0.0, t2 - t3)

    spk_next = _next_after(spk, last)
    ini_next = _next_after(ini, first)
    resume = _resume_ipu(spk, last, t4)
    still_talking = t2 > t4
    resumes = (
        resume is not None
        and resume.start <= t4 + params.backchannel_resume_gap + TIME_EPS
        and (ini_next is None or resume.start < ini_next.start)
    )
    backchannel = first.duration <= params.backchannel_max_dur + TIME_EPS and (still_talking or resumes)

    restarts = spk_next is not None and spk_next.start < t4
    # with a common end the tie rule leaves the floor with the speaker, so
    # only a speaker IPU ending strictly first hands over
    terminal = 0 < overlap <= params.smooth_tail_overlap + TIME_EPS and t2 < t4 and not restarts
    smooth = t3 >= t2 or terminal
    return {"backchannel": backchannel, "smooth": smooth, "interruption": not smooth}


def classify(
    candidate: SwitchCandidate, ipus: Mapping[str, Sequence[Segment]], params: ClassifierParams = ClassifierParams()
) -> Exchange:
    """Assign one exchange type by ordered rules: backchannel, smooth turn, interruption."""
    flags = rule_flags(candidate, ipus, params)
    if flags["backchannel"] and (flags["smooth"] or flags["interruption"]):
        log.debug("rule collision at onset %.3f resolved to backchannel: %s", candidate.onset, flags)
    last, first = candidate.speaker_last_ipu, candidate.initiator_first_ipu
    anchors = ExchangeAnchors(last.start, last.end, first.start, first.end)
    labels = InterruptionLabels()
    if flags["backchannel"]:
        kind = ExchangeType.BACKCHANNEL
    elif flags["smooth"]:
        kind = ExchangeType.SMOOTH_TURN
    else:
        kind = ExchangeType.INTERRUPTION
        held = False
        if anchors.t2 < anchors.t4:
            held = floor_holder(ipus, anchors.t2 + params.success_hold) == candidate.initiator_id
        labels = InterruptionLabels(outcome=Outcome.SUCCESSFUL if held else Outcome.FAILED)
    return Exchange(candidate.speaker_id, candidate.initiator_id, kind, anchors, labels, Source.AUTO)


def classify_ipus(
    ipus: Mapping[str, Sequence[Segment]], params: ClassifierParams = ClassifierParams()
) -> list[Exchange]:
    """Classify every switch candidate.

    When a backchannel ends after the speaker's IPU, the floor rule briefly
    credits the listener; the speaker's resuming IPU is then a continuation,
    not a new switch, and is skipped.
    """
    seqs = list(ipus.values())
    while len(seqs) < 2:
        seqs.append([])
    out, resumes = [], set()
    for cand in detect_switch_candidates(seqs[0], seqs[1]):
        if (cand.initiator_id, cand.initiator_first_ipu) in resumes:
            continue
        ex = classify(cand, ipus, params)
        if ex.type is ExchangeType.BACKCHANNEL and ex.anchors.t2 <= ex.anchors.t4:
            nxt = _resume_ipu(ipus[cand.speaker_id], cand.speaker_last_ipu, ex.anchors.t4)
            if nxt is not None:
                resumes.add((cand.speaker_id, nxt))
        out.append(ex)
    return out


def classify_session(session: SessionRecord, params: ClassifierParams = ClassifierParams()) -> SessionRecord:
    return session.replace(exchanges=classify_ipus(session.ipus, params))


# ---------------------------------------------------------------------------
# Annotations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnnotationRow:
    time: float
    type: ExchangeType
    labels: InterruptionLabels = InterruptionLabels()
    initiator_id: str = ""
    row: int = 0  # 1-based data row in the source file, for diagnostics


def _reconstruct(row: AnnotationRow, ipus: Mapping[str, Sequence[Segment]]) -> Exchange:
    if not row.initiator_id or row.initiator_id not in ipus:
        raise InputError(f"annotation row {row.row}: cannot reconstruct anchors without a known initiator_id")
    speakers = [pid for pid in ipus if pid != row.initiator_id]
    if not speakers:
        raise InputError(f"annotation row {row.row}: no speaker IPUs to anchor against")
    ini = ipus[row.initiator_id]
    if not ini:
        raise InputError(f"annotation row {row.row}: initiator has no IPUs")
    first = min(ini, key=lambda s: (0 if s.active_at(row.time) else 1, abs(s.start - row.time)))
    prior = [s for s in ipus[speakers[0]] if s.start < first.start]
    if not prior:
        raise InputError(f"annotation row {row.row}: no speaker IPU precedes the onset at {first.start}")
    last = prior[-1]
    anchors = ExchangeAnchors(last.start, last.end, first.start, first.end)
    return Exchange(speakers[0], row.initiator_id, row.type, anchors, _labels_for(row), Source.ANNOTATION)


def _labels_for(row: AnnotationRow) -> InterruptionLabels:
    return row.labels if row.type is ExchangeType.INTERRUPTION else InterruptionLabels()


def apply_annotations(
    auto: Sequence[Exchange],
    annotations: Sequence[AnnotationRow],
    tolerance: float = 0.5,
    ipus: Optional[Mapping[str, Sequence[Segment]]] = None,
) -> list[Exchange]:
    """Override automatic labels with the nearest annotation (by onset) within ``tolerance``.

    Each annotation picks the auto exchange with the nearest ``t3`` (restricted
    to the annotated initiator when one is given).  Annotations matching
    nothing become new exchanges anchored on ``ipus``.
    """
    claimed: dict[int, AnnotationRow] = {}
    orphans: list[AnnotationRow] = []
    for row in annotations:
        best, best_dist = None, None
        for i, ex in enumerate(auto):
            if row.initiator_id and ex.initiator_id != row.initiator_id:
                continue
            dist = abs(ex.t3 - row.time)
            if dist <= tolerance + TIME_EPS and (best_dist is None or dist < best_dist):
                best, best_dist = i, dist
        if best is None:
            orphans.append(row)
        elif best in claimed:
            other = claimed[best]
            raise InputError(
                f"ambiguous match: annotation rows {other.row} (t={other.time}) and {row.row} (t={row.time}) "
                f"both match the exchange at t3={auto[best].t3}"
            )
        else:
            claimed[best] = row

    out = []
    for i, ex in enumerate(auto):
        row = claimed.get(i)
        if row is None:
            out.append(ex)
        else:
            out.append(Exchange(ex.speaker_id, ex.initiator_id, row.type, ex.anchors, _labels_for(row), Source.ANNOTATION))
    if orphans:
        if ipus is None:
            raise InputError(f"annotation row {orphans[0].row} matches no exchange and no IPU context was given")
        out.extend(_reconstruct(row, ipus) for row in orphans)
    out.sort(key=lambda e: (e.t3, e.initiator_id))
    return out


# ---------------------------------------------------------------------------
# Census
# ---------------------------------------------------------------------------


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def exchange_census(sessions: Sequence[SessionRecord]) -> dict:
    """Counts per exchange type and the derived shares (``None`` when undefined)."""
    counts = {t.value: 0 for t in ExchangeType}
    outcome = {o.value: 0 for o in Outcome}
    successful_intent = {i.value: 0 for i in Intent}
    detail = {d.value: 0 for d in IntentDetail}
    for session in sessions:
        for ex in session.exchanges:
            counts[ex.type.value] += 1
            if ex.type is not ExchangeType.INTERRUPTION:
                continue
            outcome[ex.labels.outcome.value] += 1
            if ex.labels.intent_detail is not None:
                detail[ex.labels.intent_detail.value] += 1
            if ex.labels.outcome is Outcome.SUCCESSFUL:
                successful_intent[ex.labels.intent.value] += 1

    n_int = counts[ExchangeType.INTERRUPTION.value]
    n_smooth = counts[ExchangeType.SMOOTH_TURN.value]
    n_succ = outcome[Outcome.SUCCESSFUL.value]
    known_outcome = n_succ + outcome[Outcome.FAILED.value]
    n_coop = successful_intent[Intent.COOPERATIVE.value]
    known_intent = n_coop + successful_intent[Intent.COMPETITIVE.value]
    return {
        "switch_points": sum(counts.values()),
        "counts": counts,
        "interruption_outcomes": outcome,
        "successful_interruption_intents": successful_intent,
        "interruption_intent_details": detail,
        "shares": {
            "interruption_of_transitions": _ratio(n_int, n_int + n_smooth),
            "successful_interruption_of_transitions": _ratio(n_succ, n_succ + n_smooth),
            "interruption_of_switch_points": _ratio(n_int, sum(counts.values())),
            "successful_of_interruptions": _ratio(n_succ, known_outcome),
            "cooperative_of_successful": _ratio(n_coop, known_intent),
        },
    }
