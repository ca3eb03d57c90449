import filecmp
import json

import numpy as np
import pytest

from turnsync.core import ExchangeType, InfeasibleError, Outcome, validate_session
from turnsync.exchange import ClassifierParams, classify_ipus, exchange_census
from turnsync.fixture import Effect, FixtureSpec, Span, generate_fixture, spec_from_json, write_fixture


def _recovered(fx):
    for s in fx.sessions:
        found = classify_ipus(s.ipus, fx.spec.classifier)
        truth = fx.ground_truth[s.session_id]
        assert [(e.type, e.t3, e.initiator_id) for e in found] == [(r.type, r.time, r.initiator_id) for r in truth]
        for e, r in zip(found, truth):
            if e.type is ExchangeType.INTERRUPTION:
                assert e.labels.outcome is r.labels.outcome


def test_single_smooth_turn():
    fx = generate_fixture(FixtureSpec(counts={"smooth": 1}))
    (s,) = fx.sessions
    assert [e.type for e in classify_ipus(s.ipus)] == [ExchangeType.SMOOTH_TURN]


def test_default_counts_and_validity():
    fx = generate_fixture(FixtureSpec(seed=7, n_sessions=2))
    sessions = [s.replace(exchanges=tuple(classify_ipus(s.ipus))) for s in fx.sessions]
    assert exchange_census(sessions)["counts"] == {"smooth": 10, "backchannel": 5, "interruption": 5}
    assert all(validate_session(s) == [] for s in sessions)
    _recovered(fx)


def test_labels_follow_shares():
    fx = generate_fixture(FixtureSpec(seed=4, counts={"interruption": 20}, successful_share=0.75, cooperative_share=0.4))
    rows = [r for rows in fx.ground_truth.values() for r in rows]
    assert sum(r.labels.outcome is Outcome.SUCCESSFUL for r in rows) == 15
    assert sum(r.labels.intent.value == "cooperative" for r in rows) == 8
    assert all(r.labels.problems() == [] for r in rows)


def test_generation_is_deterministic(tmp_path):
    spec = FixtureSpec(seed=7, n_sessions=3, dropout=0.05)
    write_fixture(generate_fixture(spec), tmp_path / "a", with_annotations=True)
    write_fixture(generate_fixture(spec), tmp_path / "b", with_annotations=True)
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and all(not cmp.subdirs[d].diff_files for d in cmp.subdirs)
    other = generate_fixture(FixtureSpec(seed=8, n_sessions=3))
    assert other.sessions[0].ipus != generate_fixture(spec).sessions[0].ipus


def test_overlap_mean_follows_spec():
    spec = FixtureSpec(seed=5, counts={"interruption": 200}, successful_share=1.0, overlap={"interruption": (0.9, 1.4)})
    fx = generate_fixture(spec)
    overlaps = [e.overlap for s in fx.sessions for e in classify_ipus(s.ipus)]
    assert len(overlaps) == 200
    assert abs(np.mean(overlaps) - 1.15) < 0.1


def test_spec_dict_round_trip(tmp_path):
    spec = FixtureSpec(
        seed=3,
        effects=(Effect(ExchangeType.INTERRUPTION, "initiator", "F0", 1.0),),
        classifier=ClassifierParams(smooth_tail_overlap=0.8),
        overlap={"smooth": Span(0.2, 0.7)},
    )
    raw = spec.to_dict()
    assert FixtureSpec.from_dict(json.loads(json.dumps(raw))).to_dict() == raw
    (tmp_path / "s.json").write_text(json.dumps({"seed": 9, "counts": {"smooth": 2}}))
    assert spec_from_json(str(tmp_path / "s.json")).counts == {"smooth": 2}
    assert spec_from_json(None) == FixtureSpec()


@pytest.mark.parametrize(
    "raw, needle",
    [
        ({"first_ipu": {"backchannel": [0.5, 1.5]}}, "backchannel_max_dur"),
        ({"overlap": {"interruption": [0.3, 1.0]}}, "smooth_tail_overlap"),
        ({"counts": {"turns": 3}}, "unknown exchange types"),
        ({"pause": [0.01, 0.5]}, "IPU gap"),
        ({"n_sessions": 0}, "n_sessions"),
    ],
)
def test_infeasible_specs_explain(raw, needle):
    with pytest.raises(InfeasibleError, match=needle):
        generate_fixture(FixtureSpec.from_dict(raw))


def test_unknown_spec_field():
    with pytest.raises(InfeasibleError, match="unknown fixture spec fields"):
        FixtureSpec.from_dict({"sed": 1})


def test_effects_shift_the_scripted_interval():
    spec = FixtureSpec(
        seed=2, counts={"interruption": 6}, features=("F0",), noise_sd=0.0,
        effects=(Effect(ExchangeType.INTERRUPTION, "initiator", "F0", 2.0),),
    )
    fx = generate_fixture(spec)
    s = fx.sessions[0]
    for row in fx.ground_truth[s.session_id]:
        track = s.tracks[(row.initiator_id, "F0")]
        k = int(np.ceil(row.time * 25 - 1e-6))
        assert track.values[k] == 2.0 and track.values[k - 1] == 0.0


def test_write_fixture_layout(tmp_path):
    paths = write_fixture(generate_fixture(FixtureSpec(n_sessions=2)), tmp_path, with_annotations=True)
    assert [p.parent.name for p in paths] == ["S01", "S02"]
    m = json.loads(paths[0].read_text())
    assert m["annotations_path"] == "ground_truth.csv"
    assert (tmp_path / "fixture_spec.json").exists()
