import numpy as np
import pytest

from turnsync.core import ExchangeType, Participant, Role, Segment, SessionRecord


def segs(pid, *spans):
    return [Segment(pid, float(a), float(b)) for a, b in spans]


def dyad(a_spans, b_spans):
    """IPU mapping for participants A and B."""
    return {"A": segs("A", *a_spans), "B": segs("B", *b_spans)}


def session_from(ipus, exchanges=(), tracks=None, sid="S", length=None):
    ends = [s.end for v in ipus.values() for s in v]
    length = max(ends, default=0.0) + 1.0 if length is None else length
    parts = (Participant("A", Role.EXPERT), Participant("B", Role.NOVICE))
    return SessionRecord(sid, parts, ipus, length, tracks or {}, tuple(exchanges))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SMOOTH = ExchangeType.SMOOTH_TURN
BC = ExchangeType.BACKCHANNEL
INT = ExchangeType.INTERRUPTION


# --- acceptance summary: one line per criterion ------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")


def pytest_runtest_logreport(report):
    marks = getattr(report, "criterion", None)
    if marks is None:
        return
    number, title = marks
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "seconds": 0.0, "ran": False})
    if report.when == "call":
        entry["ran"] = True
        entry["seconds"] += report.duration
    if report.failed:
        entry["ok"] = False


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["ok"] and entry["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {entry['title']}  ({entry['seconds']:.2f} s)")
