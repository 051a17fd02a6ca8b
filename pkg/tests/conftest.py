import datetime as dt

import pytest

from semloop.ingest import SynthConfig, gen_synthetic
from semloop.policy import ToyConfig
from semloop.schema import COLLEGE_EXPERIENCE, GLOBEM, BehavioralWindow, DailyRecord, FeatureSchema, FeatureSpec, Domain

SLEEP = GLOBEM.keys[0]


def make_window(values, schema=GLOBEM, subject="s1", start=dt.date(2020, 3, 1), key=None):
    """14 (or len(values)) daily records; ``values`` fills ``key`` (default: first feature)."""
    key = key or schema.keys[0]
    days = tuple(
        DailyRecord(subject, start + dt.timedelta(days=i), {key: v})
        for i, v in enumerate(values)
    )
    return BehavioralWindow(subject, days)


@pytest.fixture
def tiny_schema():
    return FeatureSchema(
        "Custom",
        (FeatureSpec("sleep_duration", "Total sleep", "hours", Domain.SLEEP, "Time asleep."),),
    )


@pytest.fixture(scope="session")
def small_synth():
    return gen_synthetic(SynthConfig(GLOBEM, SLEEP, subjects_per_subset=5, weeks_per_subject=4, seed=3))


@pytest.fixture
def toy_cfg():
    return ToyConfig.for_feature(GLOBEM, SLEEP, 300.0, 540.0)


__all__ = ["make_window", "SLEEP", "GLOBEM", "COLLEGE_EXPERIENCE"]


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
