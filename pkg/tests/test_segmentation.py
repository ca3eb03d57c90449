import numpy as np
import pytest
from conftest import dyad, segs
from hypothesis import given, settings
from hypothesis import strategies as st

from turnsync.core import InfeasibleError, InputError, Segment
from turnsync.segmentation import (
    VadParams,
    detect_switch_candidates,
    energy_vad,
    floor_holder,
    merge_to_ipus,
    speech_time,
)

RATE = 16000


def tone(seconds, amp=1.0, freq=220.0):
    t = np.arange(int(round(seconds * RATE))) / RATE
    return amp * np.sin(2 * np.pi * freq * t)


def test_vad_digital_silence_is_empty():
    assert energy_vad(np.zeros(RATE * 2), RATE) == []


def test_vad_constant_tone_is_one_segment():
    out = energy_vad(tone(2.0), RATE)
    assert len(out) == 1
    hop = VadParams().hop
    assert abs(out[0].start - 0.0) <= hop and abs(out[0].end - 2.0) <= hop


def test_vad_bridges_short_gap():
    x = np.concatenate([tone(1.0), np.zeros(int(0.030 * RATE)), tone(1.0)])
    out = energy_vad(x, RATE)
    assert len(out) == 1
    assert out[0].start <= 0.01 and out[0].end >= 2.02


def test_vad_keeps_long_gap_and_drops_short_blip():
    x = np.concatenate([tone(1.0), np.zeros(RATE // 2), tone(0.05), np.zeros(RATE // 2), tone(1.0)])
    out = energy_vad(x, RATE)
    assert len(out) == 2
    assert out[1].start == pytest.approx(2.05, abs=0.02)


def test_vad_errors():
    with pytest.raises(InputError, match="empty input"):
        energy_vad(np.zeros(0), RATE)
    with pytest.raises(InfeasibleError):
        VadParams(frame_len=0.01, hop=0.02)


def test_merge_examples():
    assert merge_to_ipus(segs("A", (0.0, 1.0), (1.03, 2.0))) == segs("A", (0.0, 2.0))
    kept = segs("A", (0.0, 1.0), (1.10, 2.0))
    assert merge_to_ipus(kept) == kept
    assert merge_to_ipus([]) == []


def test_merge_gap_exactly_threshold_is_kept():
    s = segs("A", (0.0, 1.0), (1.05, 2.0))
    assert merge_to_ipus(s) == s


def test_merge_rejects_invalid_sequences():
    with pytest.raises(InputError, match="invalid VAD sequence"):
        merge_to_ipus(segs("A", (0, 1), (0.5, 2)))
    with pytest.raises(InputError, match="invalid VAD sequence"):
        merge_to_ipus(segs("A", (1, 1)))


@st.composite
def vad_sequences(draw):
    n = draw(st.integers(0, 15))
    t = draw(st.integers(0, 100))
    out = []
    for _ in range(n):
        t += draw(st.integers(1, 120))  # gap in ms
        length = draw(st.integers(1, 800))
        out.append(Segment("A", t / 1000, (t + length) / 1000))
        t += length
    return out


@settings(max_examples=200, deadline=None)
@given(vad_sequences())
def test_merge_properties(vad):
    ipus = merge_to_ipus(vad)
    gaps = [b.start - a.end for a, b in zip(ipus, ipus[1:])]
    assert all(g >= 0.050 - 1e-9 for g in gaps)
    assert merge_to_ipus(ipus) == ipus
    assert merge_to_ipus(vad, 0.0) == vad
    assert speech_time(ipus) >= speech_time(vad) - 1e-9


def test_floor_holder_rules():
    ipus = dyad([(0, 5), (6, 10)], [(3, 3.5), (11, 12)])
    assert floor_holder(ipus, 1.0) == "A"
    assert floor_holder(ipus, 3.2) == "A"  # overlap: earlier starter keeps it
    assert floor_holder(ipus, 5.5) == "A"  # nobody active: most recent end
    assert floor_holder(ipus, 10.5) == "A"
    assert floor_holder(ipus, 12.5) == "B"
    assert floor_holder({"A": [], "B": []}, 1.0) is None


def test_candidate_single_handover():
    (c,) = detect_switch_candidates(segs("A", (0, 5)), segs("B", (5.2, 8)))
    assert (c.speaker_id, c.initiator_id, c.onset) == ("A", "B", 5.2)
    assert c.speaker_last_ipu == Segment("A", 0, 5)


def test_candidate_none_without_other_side():
    assert detect_switch_candidates(segs("A", (0, 5)), []) == []


def test_candidate_brief_embedded_ipu_does_not_take_floor():
    # B's IPU lies inside A's and starts after it, so A keeps the floor and
    # A's onset at 6 continues A's own turn
    out = detect_switch_candidates(segs("A", (0, 5), (6, 10)), segs("B", (3, 3.5)))
    assert [(c.speaker_id, c.initiator_id, c.onset) for c in out] == [("A", "B", 3.0)]


def test_candidate_after_floor_passes():
    out = detect_switch_candidates(segs("A", (0, 5), (9, 10)), segs("B", (5.5, 8)))
    assert [(c.speaker_id, c.onset) for c in out] == [("A", 5.5), ("B", 9.0)]
    assert out[1].speaker_last_ipu == Segment("B", 5.5, 8)


def test_candidates_are_sorted_and_skip_self_continuation():
    out = detect_switch_candidates(segs("A", (0, 2), (2.5, 4)), segs("B", (6, 7), (7.5, 9)))
    assert [c.onset for c in out] == [6.0]
