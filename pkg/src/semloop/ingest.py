"""Loading feature/label tables, windowing, LOSO folds and synthetic cohorts."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DuplicateLabelRowError,
    IngestError,
    InvalidConfigError,
    LabelOutOfRangeError,
    MalformedCSVError,
    ScoreRangeError,
    SingleSubsetError,
    UnknownFeatureColumnError,
)
from .schema import (
    DEFAULT_WINDOW_LEN,
    BehavioralWindow,
    DailyRecord,
    FeatureSchema,
    LabeledSample,
    Score,
    validate_window,
    window_dates,
)

DEFAULT_MIN_COVERAGE = 10
LABEL_COLUMNS = ("subject_id", "date", "subset", "anxiety", "depression")


@dataclass(frozen=True)
class Dataset:
    schema: FeatureSchema
    samples: tuple[LabeledSample, ...]
    window_len: int = DEFAULT_WINDOW_LEN

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))
        seen = set()
        for s in self.samples:
            validate_window(s.window, self.schema, self.window_len)
            key = (s.subject_id, s.label_date, s.subset)
            if key in seen:
                raise IngestError(f"duplicate sample {key}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> LabeledSample:
        return self.samples[i]

    @property
    def subsets(self) -> list[str]:
        return sorted({s.subset for s in self.samples})

    def subset(self, indices: Iterable[int]) -> "Dataset":
        """A new Dataset holding only the given samples (order preserved)."""
        return Dataset(self.schema, tuple(self.samples[i] for i in indices), self.window_len)


@dataclass(frozen=True)
class Fold:
    name: str
    train: tuple[int, ...]
    test: tuple[int, ...]


def _sort_key(s: LabeledSample):
    return (s.subset, s.subject_id, s.label_date)


def assemble_dataset(
    daily: Mapping[tuple[str, dt.date], Mapping[str, Optional[float]]],
    labels: Sequence[tuple[str, dt.date, str, int, int]],
    schema: FeatureSchema,
    window_len: int = DEFAULT_WINDOW_LEN,
    min_coverage: int = DEFAULT_MIN_COVERAGE,
    include_label_day: bool = False,
) -> Dataset:
    """Build one LabeledSample per label with enough observed days in its window."""
    empty = {k: None for k in schema.keys}
    samples = []
    for subject, label_date, subset, anx, dep in labels:
        days = []
        covered = 0
        for d in window_dates(label_date, window_len, include_label_day):
            values = daily.get((subject, d))
            if values is None:
                values = empty
            elif any(v is not None for v in values.values()):
                covered += 1
            days.append(DailyRecord(subject, d, values))
        if covered < min_coverage:
            continue
        samples.append(
            LabeledSample(
                window=BehavioralWindow(subject, tuple(days)),
                label_date=label_date,
                subset=subset,
                anxiety=Score(anx),
                depression=Score(dep),
            )
        )
    samples.sort(key=_sort_key)
    return Dataset(schema, tuple(samples), window_len)


def _parse_date(text: str, where: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise MalformedCSVError(f"{where}: bad date {text!r}") from None


def _parse_float(text: str, where: str) -> Optional[float]:
    text = text.strip()
    if not text:
        return None
    try:
        v = float(text)
    except ValueError:
        raise MalformedCSVError(f"{where}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise MalformedCSVError(f"{where}: non-finite value {text!r}")
    return v


def read_features_csv(path: str | Path, schema: FeatureSchema) -> dict[tuple[str, dt.date], dict[str, Optional[float]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedCSVError(f"{path}: empty file") from None
        if header[:2] != ["subject_id", "date"]:
            raise MalformedCSVError(f"{path}: header must start with subject_id,date")
        cols = header[2:]
        for c in cols:
            if c not in schema:
                raise UnknownFeatureColumnError(f"{path}: column {c!r} not in schema {schema.name}")
        if len(set(cols)) != len(cols):
            raise MalformedCSVError(f"{path}: duplicate feature columns")
        daily: dict[tuple[str, dt.date], dict[str, Optional[float]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            where = f"{path}:{lineno}"
            if len(row) != len(header):
                raise MalformedCSVError(f"{where}: expected {len(header)} cells, got {len(row)}")
            key = (row[0], _parse_date(row[1], where))
            if key in daily:
                raise MalformedCSVError(f"{where}: duplicate feature row for {key[0]} on {key[1]}")
            values = {k: None for k in schema.keys}
            for c, cell in zip(cols, row[2:]):
                values[c] = _parse_float(cell, where)
            daily[key] = values
    return daily


def read_labels_csv(path: str | Path) -> list[tuple[str, dt.date, str, int, int]]:
    rows = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedCSVError(f"{path}: empty file") from None
        if tuple(header) != LABEL_COLUMNS:
            raise MalformedCSVError(f"{path}: header must be {','.join(LABEL_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            where = f"{path}:{lineno}"
            if len(row) != len(LABEL_COLUMNS):
                raise MalformedCSVError(f"{where}: expected {len(LABEL_COLUMNS)} cells, got {len(row)}")
            subject, date_s, subset, anx_s, dep_s = row
            if not subset:
                raise MalformedCSVError(f"{where}: empty subset tag")
            date = _parse_date(date_s, where)
            scores = []
            for name, cell in (("anxiety", anx_s), ("depression", dep_s)):
                try:
                    scores.append(int(Score.parse(cell)))
                except ScoreRangeError:
                    raise LabelOutOfRangeError(f"{where}: {name} score {cell!r} outside 0..6") from None
            if (subject, date) in seen:
                raise DuplicateLabelRowError(f"{where}: second label for {subject} on {date}")
            seen.add((subject, date))
            rows.append((subject, date, subset, scores[0], scores[1]))
    return rows


def load_dataset(
    features_path: str | Path,
    labels_path: str | Path,
    schema: FeatureSchema,
    window_len: int = DEFAULT_WINDOW_LEN,
    min_coverage: int = DEFAULT_MIN_COVERAGE,
    include_label_day: bool = False,
) -> Dataset:
    daily = read_features_csv(features_path, schema)
    labels = read_labels_csv(labels_path)
    return assemble_dataset(daily, labels, schema, window_len, min_coverage, include_label_day)


def _fmt_cell(v: Optional[float]) -> str:
    if v is None:
        return ""
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def write_dataset(d: Dataset, out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``features.csv`` and ``labels.csv``; rows are sorted so output is byte-stable."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    daily: dict[tuple[str, dt.date], Mapping[str, Optional[float]]] = {}
    for s in d.samples:
        for day in s.window.days:
            if day.has_data:
                daily[(day.subject_id, day.date)] = day.values
    feat_path, label_path = out / "features.csv", out / "labels.csv"
    keys = d.schema.keys
    with open(feat_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "date", *keys])
        for (subject, date) in sorted(daily):
            vals = daily[(subject, date)]
            w.writerow([subject, date.isoformat(), *(_fmt_cell(vals.get(k)) for k in keys)])
    with open(label_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_COLUMNS)
        for s in sorted(d.samples, key=lambda s: (s.subject_id, s.label_date)):
            w.writerow([s.subject_id, s.label_date.isoformat(), s.subset, int(s.anxiety), int(s.depression)])
    return feat_path, label_path


def split_loso(d: Dataset) -> list[Fold]:
    """One fold per subset tag: that subset is the test split, the rest train."""
    tags = d.subsets
    if len(tags) < 2:
        raise SingleSubsetError(f"leave-one-subset-out needs >= 2 subsets, found {tags}")
    folds = []
    for tag in tags:
        test = tuple(i for i, s in enumerate(d.samples) if s.subset == tag)
        train = tuple(i for i, s in enumerate(d.samples) if s.subset != tag)
        shared = {d.samples[i].subject_id for i in train} & {d.samples[i].subject_id for i in test}
        if shared:
            raise IngestError(f"subjects {sorted(shared)[:5]} appear in both train and test of fold {tag}")
        folds.append(Fold(tag, train, test))
    return folds


# --- synthetic cohorts -------------------------------------------------------

# (center, spread, lo, hi); hi None means unbounded
_UNIT_NOMINAL = {
    "minutes": (120.0, 40.0, 0.0, 1440.0),
    "hours": (4.0, 1.5, 0.0, 24.0),
    "seconds": (3600.0, 1200.0, 0.0, 86400.0),
    "meters": (5000.0, 2000.0, 0.0, None),
    "count": (10.0, 4.0, 0.0, None),
    "8-min bins": (30.0, 8.0, 0.0, 180.0),
}
_KEY_NOMINAL = {
    "f_slp:fitbit_sleep_intraday_rapids_sumdurationasleepunifiedmain": (420.0, 60.0, 0.0, 1440.0),
    "f_loc:phone_locations_doryab_timeathome": (900.0, 180.0, 0.0, 1440.0),
    "f_steps:fitbit_steps_intraday_rapids_sumsteps": (7000.0, 2500.0, 0.0, None),
    "f_screen:phone_screen_rapids_firstuseafter00unlock": (450.0, 90.0, 0.0, 1440.0),
    "sleep_duration": (7.0, 1.2, 0.0, 24.0),
    "loc_home_dur": (14.0, 3.0, 0.0, 24.0),
    "act_still_ep_0": (50000.0, 8000.0, 0.0, 86400.0),
}
_COUNT_UNITS = {"count"}


def nominal_range(schema: FeatureSchema, key: str) -> tuple[float, float, float, Optional[float]]:
    """(center, spread, lo, hi) used by the synthetic generator for a feature."""
    if key in _KEY_NOMINAL:
        return _KEY_NOMINAL[key]
    unit = schema.feature(key).unit
    if unit in _UNIT_NOMINAL:
        return _UNIT_NOMINAL[unit]
    if unit.startswith("ratio") or unit.startswith("index"):
        return (0.5, 0.15, 0.0, 1.0)
    return (10.0, 3.0, 0.0, None)


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic cohort generator settings.

    Labels follow ``y = clamp(round(6 * sigmoid(z)), 0, 6)`` with
    ``z = signal_slope * (m - center) / spread + intercept + noise_scale * N(0, 1)``
    where ``m`` is the 14-day mean of the (pre-shift) signal feature. Depression
    uses ``intercept + depression_offset``.
    """

    schema: FeatureSchema
    signal_feature: str
    subjects_per_subset: int = 20
    weeks_per_subject: int = 8
    subset_tags: tuple[str, ...] = ("DS2", "DS3", "DS4")
    noise_scale: float = 0.0
    seed: int = 0
    signal_slope: float = 1.0
    intercept: float = 0.0
    depression_offset: float = -0.5
    shift_scale: float = 0.05
    missing_rate: float = 0.0
    window_len: int = DEFAULT_WINDOW_LEN
    start_date: dt.date = dt.date(2018, 1, 1)

    def __post_init__(self) -> None:
        object.__setattr__(self, "subset_tags", tuple(self.subset_tags))
        if self.signal_feature not in self.schema:
            raise InvalidConfigError(f"signal_feature {self.signal_feature!r} not in schema {self.schema.name}")
        if not self.subset_tags or len(set(self.subset_tags)) != len(self.subset_tags):
            raise InvalidConfigError("subset_tags must be non-empty and distinct")
        if any(not t for t in self.subset_tags):
            raise InvalidConfigError("subset tags must be non-empty strings")
        if self.subjects_per_subset < 1 or self.weeks_per_subject < 1:
            raise InvalidConfigError("subjects_per_subset and weeks_per_subject must be >= 1")
        if self.noise_scale < 0 or self.shift_scale < 0:
            raise InvalidConfigError("noise_scale and shift_scale must be non-negative")
        if not 0.0 <= self.missing_rate < 1.0:
            raise InvalidConfigError("missing_rate must lie in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfigError("seed must be a 64-bit unsigned integer")


def score_from_latent(z: float) -> int:
    return int(min(6, max(0, round(6.0 / (1.0 + math.exp(-z))))))


def synth_tables(cfg: SynthConfig):
    """Raw daily rows and label rows for a synthetic cohort (deterministic in ``cfg``)."""
    rng = np.random.default_rng(cfg.seed)
    keys = cfg.schema.keys
    nominal = {k: nominal_range(cfg.schema, k) for k in keys}
    n_days = 7 * cfg.weeks_per_subject + cfg.window_len - 7
    daily: dict[tuple[str, dt.date], dict[str, Optional[float]]] = {}
    labels: list[tuple[str, dt.date, str, int, int]] = []
    s_center, s_spread, _, _ = nominal[cfg.signal_feature]

    for si, tag in enumerate(cfg.subset_tags):
        scale = 1.0 + cfg.shift_scale * rng.standard_normal(len(keys))
        offset = cfg.shift_scale * rng.standard_normal(len(keys))
        start = cfg.start_date + dt.timedelta(days=365 * si)
        for j in range(cfg.subjects_per_subset):
            subject = f"{tag}_s{j:03d}"
            latent = np.empty((n_days, len(keys)))
            for fi, k in enumerate(keys):
                center, spread, _, _ = nominal[k]
                level = center + spread * rng.uniform(-1.6, 1.6)
                drift = np.repeat(np.cumsum(rng.normal(0.0, 0.3 * spread, n_days // 7 + 1)), 7)[:n_days]
                latent[:, fi] = level + drift + rng.normal(0.0, 0.25 * spread, n_days)
            missing = rng.random((n_days, len(keys))) < cfg.missing_rate
            sig = keys.index(cfg.signal_feature)
            for t in range(n_days):
                date = start + dt.timedelta(days=t)
                row: dict[str, Optional[float]] = {}
                for fi, k in enumerate(keys):
                    if missing[t, fi]:
                        row[k] = None
                        continue
                    center, spread, lo, hi = nominal[k]
                    v = latent[t, fi] * scale[fi] + offset[fi] * spread
                    v = max(lo, v if hi is None else min(hi, v))
                    unit = cfg.schema.feature(k).unit
                    row[k] = float(round(v)) if unit in _COUNT_UNITS else round(float(v), 2)
                daily[(subject, date)] = row
            for w in range(cfg.weeks_per_subject):
                first = 7 * w
                m = float(latent[first:first + cfg.window_len, sig].mean())
                noise = cfg.noise_scale * rng.standard_normal(2)
                z = cfg.signal_slope * (m - s_center) / s_spread + cfg.intercept
                label_date = start + dt.timedelta(days=first + cfg.window_len)
                labels.append(
                    (
                        subject,
                        label_date,
                        tag,
                        score_from_latent(z + noise[0]),
                        score_from_latent(z + cfg.depression_offset + noise[1]),
                    )
                )
    return daily, labels


def gen_synthetic(cfg: SynthConfig, min_coverage: int = 0) -> Dataset:
    """Deterministic synthetic dataset: subsets x subjects x weeks labeled samples.

    ``min_coverage`` defaults to 0 so every generated label yields a sample
    even with a high ``missing_rate``.
    """
    daily, labels = synth_tables(cfg)
    return assemble_dataset(daily, labels, cfg.schema, cfg.window_len, min_coverage)
