import datetime as dt
import json

import pytest
from hypothesis import given, strategies as st

from semloop.errors import (
    MixedSubjectsError,
    NonConsecutiveDatesError,
    ScoreRangeError,
    UnknownFeatureKeyError,
    UnknownSchemaError,
    WrongLengthError,
)
from semloop.schema import (
    COLLEGE_EXPERIENCE,
    GLOBEM,
    BehavioralWindow,
    DailyRecord,
    Domain,
    FeatureSchema,
    Score,
    TaskKind,
    builtin_schema,
    load_schema,
    resolve_schema,
    validate_window,
    window_dates,
)

from conftest import make_window


def test_globem_builtin():
    s = builtin_schema("GLOBEM")
    assert len(s) == 12
    first = s.features[0]
    assert first.domain is Domain.SLEEP
    assert first.key == "f_slp:fitbit_sleep_intraday_rapids_sumdurationasleepunifiedmain"
    assert first.unit == "minutes"


def test_college_builtin():
    s = builtin_schema("CollegeExperience")
    assert len(s) == 15
    assert "sleep_duration" in s
    assert s.feature("sleep_duration").unit == "hours"


def test_unknown_schema_name():
    with pytest.raises(UnknownSchemaError):
        builtin_schema("Foo")


def test_builtins_pure_and_disjoint():
    assert builtin_schema("GLOBEM") is builtin_schema("GLOBEM")
    assert not set(GLOBEM.keys) & set(COLLEGE_EXPERIENCE.keys)
    for s in (GLOBEM, COLLEGE_EXPERIENCE):
        assert all(f.label and f.unit and f.description for f in s.features)


def test_duplicate_keys_rejected():
    f = GLOBEM.features[0]
    with pytest.raises(ValueError):
        FeatureSchema("Custom", (f, f))


def test_schema_file_roundtrip(tmp_path):
    p = tmp_path / "schema.json"
    p.write_text(json.dumps(COLLEGE_EXPERIENCE.to_dict()))
    assert load_schema(p) == COLLEGE_EXPERIENCE
    assert resolve_schema(str(p)) == COLLEGE_EXPERIENCE
    with pytest.raises(UnknownSchemaError):
        resolve_schema(str(tmp_path / "nope.json"))


@pytest.mark.parametrize("v", range(7))
def test_score_roundtrip(v):
    assert Score.parse(str(Score(v))) == v


@given(st.integers().filter(lambda v: not 0 <= v <= 6))
def test_score_rejects_out_of_range(v):
    with pytest.raises(ScoreRangeError):
        Score(v)


def test_task_parse():
    assert TaskKind.parse("Anxiety") is TaskKind.ANXIETY
    assert TaskKind.parse(TaskKind.DEPRESSION) is TaskKind.DEPRESSION
    with pytest.raises(ValueError):
        TaskKind.parse("stress")


def test_validate_window_ok():
    validate_window(make_window([400.0] * 14), GLOBEM)


def test_validate_window_wrong_length():
    with pytest.raises(WrongLengthError):
        validate_window(make_window([400.0] * 13), GLOBEM)


def test_validate_window_gap():
    w = make_window([400.0] * 14)
    days = list(w.days)
    for i in range(4, 14):
        d = days[i]
        days[i] = DailyRecord(d.subject_id, d.date + dt.timedelta(days=1), dict(d.values))
    with pytest.raises(NonConsecutiveDatesError):
        validate_window(BehavioralWindow("s1", tuple(days)), GLOBEM)


def test_validate_window_mixed_subjects():
    w = make_window([400.0] * 14)
    days = list(w.days)
    days[3] = DailyRecord("other", days[3].date, {})
    with pytest.raises(MixedSubjectsError):
        validate_window(BehavioralWindow("s1", tuple(days)), GLOBEM)


def test_validate_window_unknown_key():
    w = make_window([1.0] * 14, key="sleep_duration", schema=COLLEGE_EXPERIENCE)
    with pytest.raises(UnknownFeatureKeyError):
        validate_window(w, GLOBEM)


def test_window_dates_alignment():
    label = dt.date(2020, 1, 15)
    ds = window_dates(label, 14)
    assert ds[-1] == dt.date(2020, 1, 14) and ds[0] == dt.date(2020, 1, 1)
    assert window_dates(label, 14, include_label_day=True)[-1] == label


def test_records_are_immutable():
    d = DailyRecord("s", dt.date(2020, 1, 1), {GLOBEM.keys[0]: 1.0})
    with pytest.raises(TypeError):
        d.values[GLOBEM.keys[0]] = 2.0
