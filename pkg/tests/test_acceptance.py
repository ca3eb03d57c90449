"""Exit criteria.  Each test is one criterion; the summary prints one PASS/FAIL line per criterion."""

import itertools
import json
import math
import time

import numpy as np
import pytest
from conftest import dyad
from oracles import dtw_brute, permutation_p
from scripted_cases import CASES

from turnsync import cli
from turnsync.core import ExchangeType, Segment
from turnsync.exchange import ClassifierParams, classify_ipus
from turnsync.fixture import Effect, FixtureSpec, generate_fixture, write_fixture
from turnsync.io import read_exchanges_csv
from turnsync.pipeline import PipelineParams, run_pipeline
from turnsync.segmentation import merge_to_ipus
from turnsync.stats import aligned_average_curves, feature_comparison, normalize_track, welch_t_test
from turnsync.synchrony import dtw, tlcc

pytestmark = pytest.mark.acceptance


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def _random_vad(rng):
    out, t = [], int(rng.integers(0, 200))
    for _ in range(int(rng.integers(0, 30))):
        # gaps in ms, weighted toward the 50 ms boundary
        t += int(rng.choice([rng.integers(1, 50), 50, rng.integers(51, 400)]))
        length = int(rng.integers(1, 1500))
        out.append(Segment("A", t / 1000, (t + length) / 1000))
        t += length
    return out


@pytest.mark.criterion(1, "IPU rule on 1000 fuzzed VAD sequences")
def test_criterion_1_ipu_rule():
    rng = np.random.default_rng(1)
    with Timer() as timer:
        for _ in range(1000):
            vad = _random_vad(rng)
            ipus = merge_to_ipus(vad)
            assert all(b.start - a.end >= 0.050 - 1e-9 for a, b in zip(ipus, ipus[1:]))
            assert merge_to_ipus(ipus) == ipus
            assert merge_to_ipus(vad, 0.0) == vad
    assert timer.seconds < 1.0


def _labels(exchanges):
    return [(e.initiator_id, e.type, e.labels.outcome if e.type is ExchangeType.INTERRUPTION else None) for e in exchanges]


@pytest.mark.criterion(2, "classifier exactness on scripted cases and fixture corpora")
def test_criterion_2_classifier_exactness():
    with Timer() as timer:
        assert len(CASES) >= 12
        for name, a, b, expected in CASES:
            assert _labels(classify_ipus(dyad(a, b))) == expected, name
        specs = [FixtureSpec(seed=s, n_sessions=2) for s in range(3)]
        specs.append(
            FixtureSpec(
                seed=9, counts={"smooth": 8, "interruption": 8}, smooth_overlap_share=1.0,
                overlap={"smooth": (0.3, 0.9), "interruption": (0.95, 1.3)},
                classifier=ClassifierParams(smooth_tail_overlap=0.9), features=(),
            )
        )
        for spec in specs:
            fx = generate_fixture(spec)
            for s in fx.sessions:
                found = classify_ipus(s.ipus, spec.classifier)
                truth = fx.ground_truth[s.session_id]
                assert [(e.type, e.t3, e.initiator_id) for e in found] == [(r.type, r.time, r.initiator_id) for r in truth]
                for e, r in zip(found, truth):
                    if e.type is ExchangeType.INTERRUPTION:
                        assert e.labels.outcome is r.labels.outcome
    assert timer.seconds < 1.0


@pytest.mark.criterion(3, "DTW equals the brute-force path oracle on 200 pairs")
def test_criterion_3_dtw_oracle():
    rng = np.random.default_rng(3)
    dtw([0.0], [0.0])  # compile outside the timed region
    with Timer() as timer:
        for _ in range(200):
            n, m = rng.integers(1, 9, size=2)
            x, y = rng.normal(size=n), rng.normal(size=m)
            assert dtw(x, y) == dtw_brute(x, y)
    assert timer.seconds < 5.0


@pytest.mark.criterion(4, "TLCC recovers every shift in [-100, 100] frames")
def test_criterion_4_tlcc_shift():
    rng = np.random.default_rng(4)
    n, bound = 1000, 100
    z = rng.normal(size=n + 2 * bound)
    x = z[bound:bound + n]
    with Timer() as timer:
        for s in range(-bound, bound + 1):
            y = z[bound - s:bound - s + n]  # y[i] = x[i - s]
            value, lag = tlcc(x, y, bound)
            assert lag == s and value >= 0.999, s
    assert timer.seconds < 5.0


@pytest.mark.criterion(5, "Welch p within 0.02 of the exact permutation p; worked example")
def test_criterion_5_welch_numerics():
    with Timer() as timer:
        r = welch_t_test([1, 2, 3, 4], [5, 6, 7, 8])
        assert abs(r.t_statistic - (-4.3818)) <= 1e-3
        assert abs(r.p_value - 0.00465) <= 1e-4
        worst = (0.0, None)
        misses = total = 0
        for na, nb in itertools.product(range(4, 9), repeat=2):
            rng = np.random.default_rng([5, na, nb])
            for k in range(50):
                a = rng.normal(0.0, 1.0, na)
                b = rng.normal(rng.uniform(-1.5, 1.5), rng.uniform(0.5, 2.0), nb)
                gap = abs(welch_t_test(a, b).p_value - permutation_p(a, b))
                misses += gap > 0.02
                total += 1
                if gap > worst[0]:
                    worst = (gap, (na, nb, k))
    assert timer.seconds < 10.0
    assert misses == 0, f"{misses}/{total} datasets differ by more than 0.02; worst {worst[0]:.3f} at (n_a, n_b, k)={worst[1]}"


@pytest.mark.criterion(6, "overlap means 1.15 s / 0.62 s echoed through the pipeline")
def test_criterion_6_statistic_echo(tmp_path):
    classifier = ClassifierParams(smooth_tail_overlap=0.9)
    spec = FixtureSpec(
        seed=6, n_sessions=10, counts={"smooth": 200, "interruption": 200},
        successful_share=1.0, smooth_overlap_share=1.0,
        overlap={"smooth": (0.34, 0.90), "interruption": (0.95, 1.35)},
        features=(), classifier=classifier,
    )
    with Timer() as timer:
        write_fixture(generate_fixture(spec), tmp_path / "fx")
        report = run_pipeline([tmp_path / "fx"], PipelineParams(classifier=classifier), tmp_path / "out", sections=("classify", "stats"))
    timing = report["timing"]
    assert report["census"]["counts"] == {"smooth": 200, "backchannel": 0, "interruption": 200}
    assert abs(timing["interruption"]["overlap"]["mean"] - 1.15) < 0.1
    assert abs(timing["smooth"]["overlap"]["mean"] - 0.62) < 0.1
    assert timer.seconds < 10.0


def _normalized(sessions):
    return [s.replace(tracks={k: normalize_track(t) for k, t in s.tracks.items()}) for s in sessions]


def _classified(fx):
    return [s.replace(exchanges=tuple(classify_ipus(s.ipus, fx.spec.classifier))) for s in fx.sessions]


@pytest.mark.criterion(7, "feature comparison: +1.0 pitch effect detected; null flagged in <= 10 %")
def test_criterion_7_power_and_size(tmp_path):
    base = dict(counts={"interruption": 30}, features=("F0",), n_sessions=3)
    with Timer() as timer:
        effect = FixtureSpec(seed=70, effects=(Effect(ExchangeType.INTERRUPTION, "initiator", "F0", 1.0),), **base)
        write_fixture(generate_fixture(effect), tmp_path / "fx")
        report = run_pipeline([tmp_path / "fx"], PipelineParams(), tmp_path / "out", sections=("classify", "stats"))
        cell = report["feature_comparison"]["normalized"]["F0"]["speaker_vs_initiator"]["interruption"]
        assert cell["status"] == "ok" and cell["n_b"] == 30
        assert cell["significant"] and cell["mean_b"] > cell["mean_a"]

        flagged = 0
        for seed in range(100):
            fx = generate_fixture(FixtureSpec(seed=1000 + seed, **base))
            null = feature_comparison(_normalized(_classified(fx)), ["F0"], 0.05)
            flagged += bool(null["F0"]["speaker_vs_initiator"]["interruption"]["significant"])
    assert flagged <= 10, f"null flagged in {flagged} of 100 runs"
    assert timer.seconds < 30.0


@pytest.mark.criterion(8, "aligned AU12 step at offset 0; support follows the [t1, t4) mask")
def test_criterion_8_aligned_curve(tmp_path):
    spec = FixtureSpec(
        seed=8, n_sessions=2, counts={"smooth": 6, "interruption": 12}, features=("AU12",), noise_sd=0.0,
        effects=(Effect(ExchangeType.INTERRUPTION, "initiator", "AU12", 1.0),),
    )
    with Timer() as timer:
        fx = generate_fixture(spec)
        sessions = _classified(fx)
        curve = aligned_average_curves(sessions, "AU12", "initiator", ExchangeType.INTERRUPTION)
        offsets = list(curve.frame_offsets)
        zero = offsets.index(0)
        assert curve.mean_values[zero] == 1.0 and curve.mean_values[zero - 1] == 0.0
        assert curve.support_counts[zero] == 12

        # expected support from integer millisecond arithmetic (40 ms frames)
        expected = np.zeros(len(offsets), dtype=int)
        for s in sessions:
            for ex in s.exchanges:
                if ex.type is not ExchangeType.INTERRUPTION:
                    continue
                t1, _, t3, t4 = (round(t * 1000) for t in ex.anchors.as_tuple())
                k0 = -(-t3 // 40)
                for i, o in enumerate(offsets):
                    expected[i] += t1 <= (k0 + o) * 40 < t4
        assert np.array_equal(curve.support_counts, expected)
        assert np.all(np.isnan(curve.mean_values[expected == 0]))

        write_fixture(fx, tmp_path / "fx")
        run_pipeline([tmp_path / "fx"], PipelineParams(normalize=False), tmp_path / "out", sections=("curves",))
        rows = (tmp_path / "out" / "curves" / "AU12_interruption_initiator.csv").read_text().splitlines()[1:]
        support = [int(r.split(",")[2]) for r in rows]
        assert support == list(expected)
    assert timer.seconds < 5.0


@pytest.mark.criterion(9, "21-session pipeline byte-identical across runs and --jobs; exchanges.csv round-trip")
def test_criterion_9_determinism(tmp_path):
    spec = FixtureSpec(seed=21, n_sessions=21, counts={"smooth": 63, "backchannel": 21, "interruption": 21})
    fx = generate_fixture(spec)
    write_fixture(fx, tmp_path / "fx")
    runs = {}
    for name, jobs in (("a", 1), ("b", 1), ("c", 2)):
        with Timer() as timer:
            assert cli.main(["report", str(tmp_path / "fx"), "--jobs", str(jobs), "--out", str(tmp_path / name)]) == 0
        runs[name] = timer.seconds
        assert timer.seconds < 60.0, f"run {name} took {timer.seconds:.1f} s"

    a = tmp_path / "a"
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert len(files) > 3
    for rel in files:
        assert (a / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes() == (tmp_path / "c" / rel).read_bytes(), rel
    report = json.loads((a / "report.json").read_text())
    assert len(report["sessions"]) == 21

    back = read_exchanges_csv(a / "exchanges.csv")
    assert back == {s.session_id: list(s.exchanges) for s in _classified(fx)}
    assert sum(map(len, back.values())) == 105
    assert all(not math.isnan(e.overlap) for exs in back.values() for e in exs)
