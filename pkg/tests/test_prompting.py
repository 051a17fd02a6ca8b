import datetime as dt

import pytest
from hypothesis import given, strategies as st

from semloop.errors import EmptySummaryError, WrongLengthError
from semloop.prompting import format_value, render_stage1, render_stage2, summary_from_stage2
from semloop.schema import GLOBEM, BehavioralWindow, DailyRecord, TaskKind

from conftest import make_window


def _one(values, schema):
    return BehavioralWindow(
        "s", tuple(DailyRecord("s", dt.date(2020, 1, 1) + dt.timedelta(days=i), {"sleep_duration": v}) for i, v in enumerate(values))
    )


def test_stage1_value_line(tiny_schema):
    p = render_stage1(_one([7.5] + [8.0] * 13, tiny_schema), tiny_schema)
    assert "- Total sleep: 7.5 hours" in p.splitlines()


def test_stage1_missing_line(tiny_schema):
    p = render_stage1(_one([None] + [8.0] * 13, tiny_schema), tiny_schema)
    lines = p.splitlines()
    assert lines[3] == "- Total sleep: not recorded"


def test_stage1_exact_grammar(tiny_schema):
    p = render_stage1(_one([7.5, None] + [8.0] * 12, tiny_schema), tiny_schema)
    lines = p.split("\n")
    assert lines[0] == "You are analyzing 14 days of passive sensing data for one person."
    assert lines[1] == "Data (one block per day, oldest first):"
    assert lines[2] == "Day 1 (2020-01-01):"
    assert lines[3] == "- Total sleep: 7.5 hours"
    assert lines[4] == "Day 2 (2020-01-02):"
    assert lines[5] == "- Total sleep: not recorded"
    assert lines[-2] == "- Total sleep: 8 hours"
    assert lines[-1].startswith("Task: Summarize this person's behavioral patterns")
    assert len(lines) == 2 + 14 * 2 + 1


def test_stage1_follows_schema_order():
    p = render_stage1(make_window([420.0] * 14), GLOBEM)
    block = p.splitlines()[3:3 + len(GLOBEM)]
    assert [ln.split(":")[0][2:] for ln in block] == [f.label for f in GLOBEM.features]


def test_stage1_validates(tiny_schema):
    with pytest.raises(WrongLengthError):
        render_stage1(_one([7.0] * 13, tiny_schema), tiny_schema)


@pytest.mark.parametrize(
    "x, text",
    [(7.50, "7.5"), (7.0, "7"), (0.125, "0.12"), (0.135, "0.14"), (2.675, "2.68"), (2.665, "2.66"), (1e-9, "0"), (-0.001, "0"), (1234.5678, "1234.57")],
)
def test_format_value(x, text):
    assert format_value(x) == text


def test_stage2_grammar():
    s = "Stable sleep, declining mobility."
    p = render_stage2(s, TaskKind.ANXIETY)
    assert p.split("\n") == [
        "You are given a behavioral summary of one person's past two weeks.",
        "Summary:",
        s,
        "Based only on this summary, infer the person's PHQ-4 anxiety subscore, an integer from 0 to 6 where 0 means no symptoms and 6 means severe symptoms.",
        "Respond with exactly one line: score: <integer>",
    ]
    assert p.count(s) == 1
    assert "depression" in render_stage2(s, TaskKind.DEPRESSION)
    assert summary_from_stage2(p) == s


@pytest.mark.parametrize("s", ["", "   ", "\n\t"])
def test_stage2_empty(s):
    with pytest.raises(EmptySummaryError):
        render_stage2(s, TaskKind.ANXIETY)


values = st.lists(st.one_of(st.none(), st.floats(0, 1440, allow_nan=False)), min_size=14, max_size=14)


@given(values, values, st.text(min_size=1).filter(lambda t: t.strip()))
def test_stage2_independent_of_window(a, b, summary):
    # the Stage-2 prompt takes no window argument; same summary gives the same bytes
    render_stage1(make_window(a), GLOBEM)
    render_stage1(make_window(b), GLOBEM)
    assert render_stage2(summary, "anxiety") == render_stage2(summary, "anxiety")


@given(values, values)
def test_stage1_injective_up_to_formatting(a, b):
    pa, pb = render_stage1(make_window(a), GLOBEM), render_stage1(make_window(b), GLOBEM)
    fa = [None if v is None else format_value(v) for v in a]
    fb = [None if v is None else format_value(v) for v in b]
    assert (pa == pb) == (fa == fb)
