"""Run configuration: one JSON file, typed sections, flag overrides, provenance hash.

Layout::

    {
      "schema": "GLOBEM",
      "task": "anxiety",
      "seed": 0,
      "data": {"synth": {...}}            # or {"paths": {"features": ..., "labels": ...}}
      "reward": {"sigma": 1.2},
      "train": {...TrainConfig fields..., "holdout": ["DS4"]},
      "toy": {"signal_feature": ..., "lo": ..., "hi": ..., "buckets": 8, "think": false},
      "provider": {"base_url": ..., "model": ...},
      "eval": {"resamples": 5000, "predictors": ["mean-baseline"]},
      "out_dir": "runs/desk"
    }

``data`` is the only required key. Section-level ``seed`` entries override the
top-level seed for that section; a ``--seed`` flag overrides all of them.
"""

from __future__ import annotations

import copy
import dataclasses
import datetime as dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

from .errors import InvalidConfigError, SemloopError
from .grpo import TrainConfig
from .ingest import DEFAULT_MIN_COVERAGE, Dataset, SynthConfig, gen_synthetic, load_dataset, nominal_range
from .policy import ProviderConfig, ToyConfig
from .reward import RewardSpec
from .schema import DEFAULT_WINDOW_LEN, FeatureSchema, TaskKind, resolve_schema

PREDICTOR_NAMES = ("toy", "mean-baseline", "linear-baseline", "remote-provider")


@dataclass(frozen=True)
class PathsData:
    features: Path
    labels: Path
    window_len: int = DEFAULT_WINDOW_LEN
    min_coverage: int = DEFAULT_MIN_COVERAGE
    include_label_day: bool = False


@dataclass(frozen=True)
class ToySection:
    signal_feature: Optional[str] = None
    lo: Optional[float] = None
    hi: Optional[float] = None
    buckets: int = 8
    think: bool = False


@dataclass(frozen=True)
class EvalSection:
    resamples: int = 5000
    seed: int = 0
    predictors: tuple[str, ...] = ("mean-baseline",)
    folds: tuple[str, ...] = ()


@dataclass(frozen=True)
class RunConfig:
    schema: FeatureSchema
    task: TaskKind
    seed: int
    data: SynthConfig | PathsData
    reward: RewardSpec
    train: TrainConfig
    holdout: tuple[str, ...]
    toy: ToySection
    eval: EvalSection
    provider: Optional[ProviderConfig]
    out_dir: Optional[Path]
    raw: dict = field(repr=False, compare=False, default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def load_data(self) -> Dataset:
        if isinstance(self.data, SynthConfig):
            return gen_synthetic(self.data)
        d = self.data
        for p in (d.features, d.labels):
            if not p.is_file():
                raise InvalidConfigError(f"data file not found: {p}")
        return load_dataset(d.features, d.labels, self.schema, d.window_len, d.min_coverage, d.include_label_day)

    def toy_config(self) -> ToyConfig:
        key = self.toy.signal_feature
        if key is None:
            if isinstance(self.data, SynthConfig):
                key = self.data.signal_feature
            else:
                raise InvalidConfigError("missing config key 'toy.signal_feature'")
        if key not in self.schema:
            raise InvalidConfigError(f"toy.signal_feature {key!r} not in schema {self.schema.name}")
        center, spread, _, _ = nominal_range(self.schema, key)
        lo = center - 2 * spread if self.toy.lo is None else self.toy.lo
        hi = center + 2 * spread if self.toy.hi is None else self.toy.hi
        return ToyConfig.for_feature(self.schema, key, lo, hi, buckets=self.toy.buckets, think=self.toy.think)

    def require_provider(self) -> ProviderConfig:
        if self.provider is None:
            raise InvalidConfigError("missing config key 'provider'")
        return self.provider


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True, default=str)


def config_hash(raw: Mapping) -> str:
    return hashlib.sha256(canonical_json(raw).encode()).hexdigest()[:16]


def _section(cls, raw: Any, where: str, **extra):
    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        raise InvalidConfigError(f"config key {where!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise InvalidConfigError(f"unknown config key {where}.{unknown[0]!r}")
    kwargs = {**raw, **extra}
    required = [
        f.name for f in dataclasses.fields(cls)
        if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING and f.name not in kwargs
    ]
    if required:
        raise InvalidConfigError(f"missing config key '{where}.{required[0]}'")
    try:
        return cls(**kwargs)
    except SemloopError as exc:
        raise type(exc)(f"config section {where!r}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise InvalidConfigError(f"bad value in config section {where!r}: {exc}") from None


def apply_overrides(raw: Mapping, seed: Optional[int] = None, task: Optional[str] = None) -> dict:
    """Copy of ``raw`` with flag values written over file values."""
    out = copy.deepcopy(dict(raw))
    if seed is not None:
        out["seed"] = seed
        for sect in ("train", "eval"):
            if isinstance(out.get(sect), dict):
                out[sect].pop("seed", None)
        synth = out.get("data", {}).get("synth") if isinstance(out.get("data"), dict) else None
        if isinstance(synth, dict):
            synth.pop("seed", None)
    if task is not None:
        out["task"] = task
    return out


_TOP_KEYS = {"schema", "task", "seed", "data", "reward", "train", "toy", "provider", "eval", "out_dir"}


def parse_config(raw: Mapping, base_dir: Path = Path(".")) -> RunConfig:
    """Validate a raw config mapping.

    Relative data paths resolve against ``base_dir`` (the config file's folder);
    ``out_dir`` stays relative to the working directory.
    """
    if not isinstance(raw, Mapping):
        raise InvalidConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise InvalidConfigError(f"unknown config key {unknown[0]!r}")
    if "data" not in raw:
        raise InvalidConfigError("missing config key 'data'")
    schema = resolve_schema(str(raw.get("schema", "GLOBEM")))
    try:
        task = TaskKind.parse(raw.get("task", "anxiety"))
        seed = int(raw.get("seed", 0))
    except (ValueError, TypeError) as exc:
        raise InvalidConfigError(str(exc)) from None
    if not 0 <= seed < 2**64:
        raise InvalidConfigError("seed must be a 64-bit unsigned integer")

    data_raw = raw["data"]
    if not isinstance(data_raw, Mapping) or len(set(data_raw) & {"synth", "paths"}) != 1 or set(data_raw) - {"synth", "paths"}:
        raise InvalidConfigError("config key 'data' needs exactly one of 'synth' or 'paths'")
    if "synth" in data_raw:
        s = dict(data_raw["synth"] or {})
        s.setdefault("seed", seed)
        s.setdefault("signal_feature", schema.keys[0])
        if "start_date" in s:
            try:
                s["start_date"] = dt.date.fromisoformat(str(s["start_date"]))
            except ValueError:
                raise InvalidConfigError(f"bad data.synth.start_date {s['start_date']!r}") from None
        if "subset_tags" in s:
            s["subset_tags"] = tuple(s["subset_tags"])
        data: SynthConfig | PathsData = _section(SynthConfig, s, "data.synth", schema=schema)
    else:
        p = dict(data_raw["paths"] or {})
        for k in ("features", "labels"):
            if k in p:
                p[k] = (base_dir / str(p[k])) if not Path(str(p[k])).is_absolute() else Path(str(p[k]))
        data = _section(PathsData, p, "data.paths")

    train_raw = dict(raw.get("train") or {})
    holdout = train_raw.pop("holdout", ())
    holdout = (holdout,) if isinstance(holdout, str) else tuple(holdout)
    train_raw.setdefault("seed", seed)
    if "adam_betas" in train_raw:
        train_raw["adam_betas"] = tuple(train_raw["adam_betas"])
    train = _section(TrainConfig, train_raw, "train")

    eval_raw = dict(raw.get("eval") or {})
    eval_raw.setdefault("seed", seed)
    for k in ("predictors", "folds"):
        if k in eval_raw:
            eval_raw[k] = tuple(eval_raw[k])
    ev = _section(EvalSection, eval_raw, "eval")
    if ev.resamples < 1:
        raise InvalidConfigError("eval.resamples must be >= 1")
    for name in ev.predictors:
        if name not in PREDICTOR_NAMES:
            raise InvalidConfigError(f"unknown predictor {name!r}; choose from {', '.join(PREDICTOR_NAMES)}")

    provider = None if raw.get("provider") is None else _section(ProviderConfig, raw["provider"], "provider")
    out_dir = raw.get("out_dir")
    return RunConfig(
        schema=schema,
        task=task,
        seed=seed,
        data=data,
        reward=_section(RewardSpec, raw.get("reward"), "reward"),
        train=train,
        holdout=holdout,
        toy=_section(ToySection, raw.get("toy"), "toy"),
        eval=ev,
        provider=provider,
        out_dir=None if out_dir is None else Path(str(out_dir)),
        raw=dict(raw),
    )


def load_config(path: str | Path, seed: Optional[int] = None, task: Optional[str] = None) -> RunConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"{path}: not valid JSON ({exc})") from None
    return parse_config(apply_overrides(raw, seed, task), path.parent)
