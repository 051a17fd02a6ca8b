"""Feature vocabulary, behavioral windows and PHQ-4 labels."""

from __future__ import annotations

import datetime as dt
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Optional, Sequence

from .errors import (
    InvalidConfigError,
    MixedSubjectsError,
    NonConsecutiveDatesError,
    ScoreRangeError,
    UnknownFeatureKeyError,
    UnknownSchemaError,
    WrongLengthError,
)

SCORE_MIN = 0
SCORE_MAX = 6
DEFAULT_WINDOW_LEN = 14


class Domain(str, enum.Enum):
    SLEEP = "Sleep"
    MOBILITY = "Mobility"
    ACTIVITY = "Activity"
    PHONE_USE = "PhoneUse"
    COMMUNICATION = "Communication"

    @classmethod
    def parse(cls, text: str) -> "Domain":
        norm = text.replace(" ", "").lower()
        for d in cls:
            if d.value.lower() == norm:
                return d
        raise InvalidConfigError(f"unknown feature domain {text!r}")


class TaskKind(str, enum.Enum):
    ANXIETY = "anxiety"
    DEPRESSION = "depression"

    @classmethod
    def parse(cls, text: str | "TaskKind") -> "TaskKind":
        if isinstance(text, TaskKind):
            return text
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise InvalidConfigError(f"unknown task {text!r}; expected anxiety or depression") from None


class Score(int):
    """A PHQ-4 subscore, an integer in 0..6."""

    def __new__(cls, value: int) -> "Score":
        if isinstance(value, bool) or int(value) != value:
            raise ScoreRangeError(f"score must be an integer, got {value!r}")
        if not SCORE_MIN <= value <= SCORE_MAX:
            raise ScoreRangeError(f"score {value} outside {SCORE_MIN}..{SCORE_MAX}")
        return super().__new__(cls, int(value))

    @classmethod
    def parse(cls, text: str) -> "Score":
        text = text.strip()
        if not text.isdigit():
            raise ScoreRangeError(f"not an integer score: {text!r}")
        return cls(int(text))

    def __repr__(self) -> str:
        return f"Score({int(self)})"

    def __str__(self) -> str:
        return str(int(self))


@dataclass(frozen=True)
class FeatureSpec:
    key: str
    label: str
    unit: str
    domain: Domain
    description: str = ""

    def __post_init__(self) -> None:
        if not self.key:
            raise InvalidConfigError("feature key must be non-empty")
        if not self.unit:
            raise InvalidConfigError(f"feature {self.key!r} has an empty unit")
        if not self.label:
            raise InvalidConfigError(f"feature {self.key!r} has an empty label")


@dataclass(frozen=True)
class FeatureSchema:
    name: str
    features: tuple[FeatureSpec, ...]

    def __post_init__(self) -> None:
        if not self.features:
            raise InvalidConfigError("a schema needs at least one feature")
        keys = [f.key for f in self.features]
        if len(set(keys)) != len(keys):
            dup = sorted({k for k in keys if keys.count(k) > 1})
            raise InvalidConfigError(f"duplicate feature keys: {dup}")

    @property
    def keys(self) -> tuple[str, ...]:
        return tuple(f.key for f in self.features)

    def __len__(self) -> int:
        return len(self.features)

    def __contains__(self, key: object) -> bool:
        return any(f.key == key for f in self.features)

    def feature(self, key: str) -> FeatureSpec:
        for f in self.features:
            if f.key == key:
                return f
        raise UnknownFeatureKeyError(f"feature {key!r} not in schema {self.name}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "features": [
                {
                    "key": f.key,
                    "label": f.label,
                    "unit": f.unit,
                    "domain": f.domain.value,
                    "description": f.description,
                }
                for f in self.features
            ],
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "FeatureSchema":
        try:
            feats = tuple(
                FeatureSpec(
                    key=str(f["key"]),
                    label=str(f["label"]),
                    unit=str(f["unit"]),
                    domain=Domain.parse(str(f["domain"])),
                    description=str(f.get("description", "")),
                )
                for f in obj["features"]
            )
            return cls(name=str(obj["name"]), features=feats)
        except KeyError as exc:
            raise InvalidConfigError(f"schema file missing key {exc.args[0]!r}") from None


def load_schema(path: str | Path) -> FeatureSchema:
    with open(path, encoding="utf-8") as fh:
        return FeatureSchema.from_dict(json.load(fh))


def _f(key: str, label: str, unit: str, domain: Domain, description: str) -> FeatureSpec:
    return FeatureSpec(key=key, label=label, unit=unit, domain=domain, description=description)


_S, _M, _A, _P, _C = Domain.SLEEP, Domain.MOBILITY, Domain.ACTIVITY, Domain.PHONE_USE, Domain.COMMUNICATION

GLOBEM = FeatureSchema(
    name="GLOBEM",
    features=(
        _f("f_slp:fitbit_sleep_intraday_rapids_sumdurationasleepunifiedmain", "Time asleep (main sleep)",
           "minutes", _S, "Total time asleep during the main sleep period; sleep quantity."),
        _f("f_slp:fitbit_sleep_intraday_rapids_ratiodurationasleepunifiedwithinmain", "Sleep efficiency",
           "ratio (0-1)", _S, "Proportion of time in bed actually asleep; sleep efficiency."),
        _f("f_loc:phone_locations_doryab_timeathome", "Time at home",
           "minutes", _M, "Time spent at the inferred home location; stay-at-home behavior."),
        _f("f_loc:phone_locations_doryab_numberofsignificantplaces", "Significant places visited",
           "count", _M, "Number of unique significant locations visited; life-space breadth."),
        _f("f_loc:phone_locations_locmap_duration_in_locmap_greens", "Time in green spaces",
           "minutes", _M, "Time spent in green spaces or parks; restorative out-of-home context."),
        _f("f_loc:phone_locations_barnett_circdnrtn", "Routine deviation",
           "index (0-1)", _M, "Deviation of the daily mobility pattern from the user's norm; routine consistency."),
        _f("f_steps:fitbit_steps_intraday_rapids_sumsteps", "Daily steps",
           "count", _A, "Total daily step count; overall movement volume."),
        _f("f_steps:fitbit_steps_intraday_rapids_avgdurationactivebout", "Average active bout length",
           "minutes", _A, "Average length of sustained active bouts; intentional activity vs. incidental motion."),
        _f("f_screen:phone_screen_rapids_countepisodeunlock", "Phone unlocks",
           "count", _P, "Number of phone unlock episodes; device-checking frequency."),
        _f("f_screen:phone_screen_rapids_firstuseafter00unlock", "First phone use after midnight",
           "minutes", _P, "Minutes after midnight until the first unlock; morning-activation timing."),
        _f("f_call:phone_calls_rapids_outgoing_sumduration", "Outgoing call time",
           "minutes", _C, "Total outgoing call duration; active social initiative."),
        _f("f_blue:phone_bluetooth_doryab_uniquedevicesothers", "Nearby Bluetooth devices",
           "count", _C, "Unique nearby Bluetooth devices; ambient social density."),
    ),
)

COLLEGE_EXPERIENCE = FeatureSchema(
    name="CollegeExperience",
    features=(
        _f("sleep_duration", "Total sleep", "hours", _S,
           "Estimated total time asleep for the day; sleep quantity."),
        _f("sleep_start", "Sleep onset (after 8 PM)", "8-min bins", _S,
           "Sleep onset time as offset from 8:00 PM; bedtime regularity."),
        _f("sleep_end", "Wake time (after 8 PM)", "8-min bins", _S,
           "Wake time as offset from 8:00 PM; morning-activation timing."),
        _f("loc_home_dur", "Time at home", "hours", _M,
           "Time spent at the inferred home location; stay-at-home behavior."),
        _f("loc_visit_num_ep_0", "Distinct locations visited", "count", _M,
           "Number of distinct locations visited; life-space breadth."),
        _f("loc_dist_ep_0", "Distance traveled", "meters", _M,
           "Total distance traveled; overall mobility volume."),
        _f("loc_social_dur", "Time at social places", "hours", _M,
           "Time at social locations; in-person social engagement."),
        _f("loc_study_dur", "Time at study places", "hours", _M,
           "Time at study locations such as libraries; academic engagement."),
        _f("loc_leisure_dur", "Time at leisure places", "hours", _M,
           "Time at leisure locations such as parks or shops; restorative context."),
        _f("loc_food_dur", "Time at food places", "hours", _M,
           "Time at food locations; routine eating context."),
        _f("loc_workout_dur", "Time at workout places", "hours", _M,
           "Time at workout locations such as gyms; intentional activity."),
        _f("act_still_ep_0", "Time stationary", "seconds", _A,
           "Total stationary duration; physical inactivity."),
        _f("act_walking_ep_0", "Time walking", "seconds", _A,
           "Total walking duration; everyday movement volume."),
        _f("unlock_num_ep_0", "Phone unlocks", "count", _P,
           "Number of phone unlock events; device-checking frequency."),
        _f("unlock_duration_ep_0", "Phone unlocked time", "seconds", _P,
           "Total time the phone was in the unlocked state; overall device engagement."),
    ),
)

_BUILTIN = {"GLOBEM": GLOBEM, "CollegeExperience": COLLEGE_EXPERIENCE}


def builtin_schema(name: str) -> FeatureSchema:
    """Return the GLOBEM (12 features) or CollegeExperience (15 features) schema."""
    try:
        return _BUILTIN[name]
    except KeyError:
        raise UnknownSchemaError(f"unknown schema {name!r}; expected one of {sorted(_BUILTIN)}") from None


def resolve_schema(name_or_path: str) -> FeatureSchema:
    """Built-in schema by name, otherwise a JSON schema file."""
    if name_or_path in _BUILTIN:
        return _BUILTIN[name_or_path]
    if Path(name_or_path).is_file():
        return load_schema(name_or_path)
    raise UnknownSchemaError(f"{name_or_path!r} is neither a built-in schema nor a schema file")


@dataclass(frozen=True)
class DailyRecord:
    subject_id: str
    date: dt.date
    values: Mapping[str, Optional[float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", MappingProxyType(dict(self.values)))

    def get(self, key: str) -> Optional[float]:
        return self.values.get(key)

    @property
    def has_data(self) -> bool:
        return any(v is not None for v in self.values.values())


@dataclass(frozen=True)
class BehavioralWindow:
    subject_id: str
    days: tuple[DailyRecord, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "days", tuple(self.days))

    @property
    def start(self) -> dt.date:
        return self.days[0].date

    @property
    def end(self) -> dt.date:
        return self.days[-1].date

    def __len__(self) -> int:
        return len(self.days)

    def series(self, key: str) -> list[Optional[float]]:
        return [d.get(key) for d in self.days]


def validate_window(
    w: BehavioralWindow, schema: FeatureSchema, window_len: int = DEFAULT_WINDOW_LEN
) -> None:
    """Raise a WindowError subclass if ``w`` breaks a window invariant."""
    if len(w.days) != window_len:
        raise WrongLengthError(f"window has {len(w.days)} days, expected {window_len}")
    for i, day in enumerate(w.days):
        if day.subject_id != w.subject_id:
            raise MixedSubjectsError(
                f"day {i + 1} belongs to {day.subject_id!r}, window subject is {w.subject_id!r}"
            )
        if i and (day.date - w.days[i - 1].date).days != 1:
            raise NonConsecutiveDatesError(f"day {i + 1} ({day.date}) does not follow {w.days[i - 1].date}")
        for key in day.values:
            if key not in schema:
                raise UnknownFeatureKeyError(f"day {i + 1} has feature {key!r} not in schema {schema.name}")


@dataclass(frozen=True)
class LabeledSample:
    window: BehavioralWindow
    label_date: dt.date
    subset: str
    anxiety: Score
    depression: Score

    def __post_init__(self) -> None:
        if not self.subset:
            raise InvalidConfigError("sample subset tag must be non-empty")
        object.__setattr__(self, "anxiety", Score(self.anxiety))
        object.__setattr__(self, "depression", Score(self.depression))
        gap = (self.label_date - self.window.end).days
        if gap not in (0, 1):
            raise InvalidConfigError(
                f"label date {self.label_date} must be the last window day or the day after ({self.window.end})"
            )

    @property
    def subject_id(self) -> str:
        return self.window.subject_id

    def target(self, task: TaskKind) -> Score:
        return self.anxiety if TaskKind.parse(task) is TaskKind.ANXIETY else self.depression


def window_dates(label_date: dt.date, window_len: int, include_label_day: bool = False) -> list[dt.date]:
    """Calendar dates of the window that precedes a label, oldest first."""
    last = label_date if include_label_day else label_date - dt.timedelta(days=1)
    return [last - dt.timedelta(days=window_len - 1 - i) for i in range(window_len)]


def check_keys(keys: Sequence[str], schema: FeatureSchema) -> None:
    for k in keys:
        if k not in schema:
            raise UnknownFeatureKeyError(f"feature {k!r} not in schema {schema.name}")
