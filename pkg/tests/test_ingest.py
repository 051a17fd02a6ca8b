import datetime as dt
import random

import pytest
from hypothesis import given, settings, strategies as st

from semloop.errors import (
    DuplicateLabelRowError,
    InvalidConfigError,
    LabelOutOfRangeError,
    MalformedCSVError,
    SingleSubsetError,
    UnknownFeatureColumnError,
)
from semloop.ingest import Dataset, SynthConfig, gen_synthetic, load_dataset, split_loso, write_dataset
from semloop.schema import GLOBEM, validate_window

from conftest import SLEEP

D0 = dt.date(2021, 2, 1)


def _write(tmp_path, feat_rows, label_rows, header=None):
    header = header or ["subject_id", "date", "sleep_duration"]
    f = tmp_path / "features.csv"
    f.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in feat_rows]) + "\n")
    lab = tmp_path / "labels.csv"
    lab.write_text("\n".join(["subject_id,date,subset,anxiety,depression"] + [",".join(map(str, r)) for r in label_rows]) + "\n")
    return f, lab


def _days(n, subject="a"):
    return [(subject, (D0 + dt.timedelta(days=i)).isoformat(), 7.0 + i / 10) for i in range(n)]


def test_single_label_window(tmp_path, tiny_schema):
    day15 = (D0 + dt.timedelta(days=14)).isoformat()
    f, lab = _write(tmp_path, _days(20), [("a", day15, "DS2", 3, 2)])
    d = load_dataset(f, lab, tiny_schema)
    assert len(d) == 1
    w = d[0].window
    assert len(w) == 14 and w.start == D0 and w.end == D0 + dt.timedelta(days=13)
    assert d[0].anxiety == 3 and d[0].depression == 2


def test_label_day_included_variant(tmp_path, tiny_schema):
    day15 = (D0 + dt.timedelta(days=14)).isoformat()
    f, lab = _write(tmp_path, _days(20), [("a", day15, "DS2", 3, 2)])
    d = load_dataset(f, lab, tiny_schema, include_label_day=True)
    assert d[0].window.end == D0 + dt.timedelta(days=14)


def test_min_coverage_excludes_sparse_windows(tmp_path, tiny_schema):
    rows = _days(20)
    sparse = rows[:9]  # only 9 of the 14 window days present
    day15 = (D0 + dt.timedelta(days=14)).isoformat()
    f, lab = _write(tmp_path, sparse, [("a", day15, "DS2", 1, 1)])
    assert len(load_dataset(f, lab, tiny_schema)) == 0
    assert len(load_dataset(f, lab, tiny_schema, min_coverage=9)) == 1


def test_missing_cells_pass_through(tmp_path, tiny_schema):
    rows = _days(20)
    rows[3] = ("a", rows[3][1], "")
    day15 = (D0 + dt.timedelta(days=14)).isoformat()
    f, lab = _write(tmp_path, rows, [("a", day15, "DS2", 1, 1)])
    d = load_dataset(f, lab, tiny_schema)
    assert d[0].window.series("sleep_duration")[3] is None


def test_label_out_of_range(tmp_path, tiny_schema):
    f, lab = _write(tmp_path, _days(20), [("a", "2021-02-15", "DS2", 7, 1)])
    with pytest.raises(LabelOutOfRangeError):
        load_dataset(f, lab, tiny_schema)


def test_duplicate_label(tmp_path, tiny_schema):
    f, lab = _write(tmp_path, _days(20), [("a", "2021-02-15", "DS2", 1, 1), ("a", "2021-02-15", "DS2", 2, 1)])
    with pytest.raises(DuplicateLabelRowError):
        load_dataset(f, lab, tiny_schema)


def test_unknown_column(tmp_path, tiny_schema):
    f, lab = _write(tmp_path, [], [], header=["subject_id", "date", "steps"])
    with pytest.raises(UnknownFeatureColumnError):
        load_dataset(f, lab, tiny_schema)


@pytest.mark.parametrize("cell", ["abc", "nan", "inf"])
def test_malformed_cells(tmp_path, tiny_schema, cell):
    rows = _days(20)
    rows[2] = ("a", rows[2][1], cell)
    f, lab = _write(tmp_path, rows, [("a", "2021-02-15", "DS2", 1, 1)])
    with pytest.raises(MalformedCSVError):
        load_dataset(f, lab, tiny_schema)


def test_malformed_date(tmp_path, tiny_schema):
    f, lab = _write(tmp_path, [("a", "2021/02/01", 7)], [])
    with pytest.raises(MalformedCSVError):
        load_dataset(f, lab, tiny_schema)


def test_synthetic_count_and_determinism():
    cfg = SynthConfig(GLOBEM, SLEEP, subjects_per_subset=5, weeks_per_subject=4, seed=11)
    a, b = gen_synthetic(cfg), gen_synthetic(cfg)
    assert len(a) == 3 * 5 * 4
    assert a == b
    assert gen_synthetic(SynthConfig(GLOBEM, SLEEP, subjects_per_subset=5, weeks_per_subject=4, seed=12)) != a


def test_synthetic_constant_labels_when_slope_zero():
    d = gen_synthetic(SynthConfig(GLOBEM, SLEEP, subjects_per_subset=4, weeks_per_subject=3, signal_slope=0.0, seed=5))
    assert len({int(s.anxiety) for s in d.samples}) == 1
    assert len({int(s.depression) for s in d.samples}) == 1


def test_synth_config_validation():
    with pytest.raises(InvalidConfigError):
        SynthConfig(GLOBEM, "nope")
    with pytest.raises(InvalidConfigError):
        SynthConfig(GLOBEM, SLEEP, subset_tags=("A", "A"))
    with pytest.raises(InvalidConfigError):
        SynthConfig(GLOBEM, SLEEP, noise_scale=-1)


def test_write_then_load_roundtrip(tmp_path, small_synth):
    write_dataset(small_synth, tmp_path)
    back = load_dataset(tmp_path / "features.csv", tmp_path / "labels.csv", GLOBEM, min_coverage=0)
    assert back == small_synth


def test_load_is_row_order_invariant(tmp_path, small_synth):
    write_dataset(small_synth, tmp_path)
    ref = load_dataset(tmp_path / "features.csv", tmp_path / "labels.csv", GLOBEM, min_coverage=0)
    for name in ("features.csv", "labels.csv"):
        lines = (tmp_path / name).read_text().splitlines()
        body = lines[1:]
        random.Random(0).shuffle(body)
        (tmp_path / name).write_text("\n".join([lines[0], *body]) + "\n")
    assert load_dataset(tmp_path / "features.csv", tmp_path / "labels.csv", GLOBEM, min_coverage=0) == ref


def test_loso_three_subsets(small_synth):
    folds = split_loso(small_synth)
    assert [f.name for f in folds] == ["DS2", "DS3", "DS4"]
    n = len(small_synth)
    for f in folds:
        assert not set(f.train) & set(f.test)
        assert sorted(f.train + f.test) == list(range(n))
        assert all(small_synth[i].subset == f.name for i in f.test)
        assert all(small_synth[i].subset != f.name for i in f.train)
        assert not {small_synth[i].subject_id for i in f.train} & {small_synth[i].subject_id for i in f.test}
    ds3 = next(f for f in folds if f.name == "DS3")
    assert set(ds3.test) == {i for i, s in enumerate(small_synth.samples) if s.subset == "DS3"}
    tests = [set(f.test) for f in folds]
    assert set().union(*tests) == set(range(n)) and sum(map(len, tests)) == n


def test_loso_two_and_one_subsets():
    two = gen_synthetic(SynthConfig(GLOBEM, SLEEP, subjects_per_subset=2, weeks_per_subject=2, subset_tags=("A", "B")))
    folds = split_loso(two)
    assert len(folds) == 2
    assert set(folds[0].train) == set(folds[1].test)
    one = gen_synthetic(SynthConfig(GLOBEM, SLEEP, subjects_per_subset=2, weeks_per_subject=2, subset_tags=("A",)))
    with pytest.raises(SingleSubsetError):
        split_loso(one)


@settings(max_examples=15, deadline=None)
@given(
    seed=st.integers(0, 2**32),
    subjects=st.integers(1, 3),
    weeks=st.integers(1, 3),
    missing=st.floats(0.0, 0.9),
)
def test_generated_windows_validate(seed, subjects, weeks, missing):
    d = gen_synthetic(SynthConfig(GLOBEM, SLEEP, subjects_per_subset=subjects, weeks_per_subject=weeks, seed=seed, missing_rate=missing))
    assert len(d) == 3 * subjects * weeks
    for s in d.samples:
        validate_window(s.window, GLOBEM)
        assert 0 <= s.anxiety <= 6
    assert isinstance(Dataset(d.schema, d.samples), Dataset)
