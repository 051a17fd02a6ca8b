"""Leave-one-subset-out evaluation: MAE, bootstrap SE and paired-bootstrap tests."""

from __future__ import annotations

import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Optional, Protocol, Sequence

import numpy as np

from .errors import EmptySetError, LengthMismatchError, ProviderError
from .ingest import Dataset, Fold
from .parsing import extract_score, extract_summary
from .policy import Provider, SampleRequest
from .prompting import render_stage1, render_stage2
from .schema import DEFAULT_WINDOW_LEN, SCORE_MAX, SCORE_MIN, BehavioralWindow, FeatureSchema, TaskKind

log = logging.getLogger(__name__)

DEFAULT_RESAMPLES = 5000
_CHUNK = 500


class Predictor(Protocol):
    def fit(self, train: Dataset, task: TaskKind) -> None: ...

    def predict(self, window: BehavioralWindow) -> Optional[int]: ...


@dataclass(frozen=True)
class PredictionRow:
    method: str
    fold: str
    sample: int
    subject_id: str
    label_date: str
    true: int
    pred: Optional[int]

    @property
    def error(self) -> Optional[float]:
        return None if self.pred is None else float(abs(self.pred - self.true))


@dataclass
class FoldReport:
    fold: str
    method: str
    n: int
    mae: float
    se: float
    comparisons: dict[str, float] = field(default_factory=dict)
    n_missing: int = 0
    fold_mean_mae: Optional[float] = None


@dataclass
class LosoReport:
    task: str
    methods: list[str]
    folds: list[FoldReport]
    pooled: dict[str, FoldReport]
    predictions: list[PredictionRow]

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "methods": self.methods,
            "folds": [asdict(f) for f in self.folds],
            "pooled": {m: asdict(r) for m, r in self.pooled.items()},
        }


def clamp_round(x: float) -> int:
    """Round half-to-even, then clamp into the score range."""
    return int(min(SCORE_MAX, max(SCORE_MIN, round(float(x)))))


# --- statistics --------------------------------------------------------------

def mae(pred: Sequence[float], true: Sequence[float]) -> float:
    p, t = np.asarray(pred, dtype=float), np.asarray(true, dtype=float)
    if p.size == 0:
        raise EmptySetError("MAE of an empty prediction set")
    if p.shape != t.shape:
        raise LengthMismatchError("predictions and labels differ in length")
    return float(np.mean(np.abs(p - t)))


def fold_average_mae(per_fold: Sequence[float]) -> float:
    if not per_fold:
        raise EmptySetError("no folds")
    return float(np.mean(per_fold))


def _resampled_means(errors: np.ndarray, B: int, rng: np.random.Generator) -> np.ndarray:
    n = errors.size
    out = np.empty(B)
    for start in range(0, B, _CHUNK):
        stop = min(B, start + _CHUNK)
        idx = rng.integers(0, n, size=(stop - start, n))
        out[start:stop] = errors[idx].mean(axis=1)
    return out


def bootstrap_se(errors: Sequence[float], B: int = DEFAULT_RESAMPLES, seed: int = 0) -> float:
    """Standard deviation of the MAE over ``B`` with-replacement resamples."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise EmptySetError("bootstrap of an empty error set")
    if B < 1:
        raise ValueError("B must be >= 1")
    return float(_resampled_means(e, B, np.random.default_rng(seed)).std())


def paired_bootstrap(err_a: Sequence[float], err_b: Sequence[float], B: int = DEFAULT_RESAMPLES, seed: int = 0) -> float:
    """One-sided p-value that method A is no better than method B.

    Both error vectors are resampled with the same indices; the p-value is the
    share of resamples where mean(A) >= mean(B). Ties count against A.
    """
    a, b = np.asarray(err_a, dtype=float), np.asarray(err_b, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatchError(f"paired errors differ in length: {a.size} vs {b.size}")
    if a.size == 0:
        raise EmptySetError("paired bootstrap of empty error sets")
    rng = np.random.default_rng(seed)
    n = a.size
    hits = 0
    for start in range(0, B, _CHUNK):
        stop = min(B, start + _CHUNK)
        idx = rng.integers(0, n, size=(stop - start, n))
        hits += int(np.count_nonzero(a[idx].mean(axis=1) >= b[idx].mean(axis=1)))
    return hits / B


def stars(p: float) -> str:
    return "***" if p < 0.001 else "**" if p < 0.01 else "*" if p < 0.05 else ""


# --- baselines ---------------------------------------------------------------

class MeanBaseline:
    """Predicts the rounded mean training label for every window."""

    def __init__(self) -> None:
        self.value: Optional[int] = None

    def fit(self, train: Dataset, task: TaskKind) -> None:
        if len(train) == 0:
            raise EmptySetError("mean baseline needs a non-empty train split")
        ys = [int(s.target(task)) for s in train.samples]
        self.value = clamp_round(np.mean(ys))

    def predict(self, window: BehavioralWindow) -> int:
        return self.value


def window_means(window: BehavioralWindow, keys: Sequence[str]) -> list[Optional[float]]:
    out = []
    for k in keys:
        vals = [v for v in window.series(k) if v is not None]
        out.append(float(np.mean(vals)) if vals else None)
    return out


class LinearBaseline:
    """Least squares on per-window feature means; falls back to the mean baseline if rank-deficient."""

    def __init__(self) -> None:
        self.coef: Optional[np.ndarray] = None
        self.fill: Optional[np.ndarray] = None
        self.keys: tuple[str, ...] = ()
        self.fallback: Optional[MeanBaseline] = None

    def fit(self, train: Dataset, task: TaskKind) -> None:
        if len(train) == 0:
            raise EmptySetError("linear baseline needs a non-empty train split")
        self.keys = train.schema.keys
        rows = [window_means(s.window, self.keys) for s in train.samples]
        X = np.array([[np.nan if v is None else v for v in r] for r in rows], dtype=float)
        col_mean = np.nanmean(np.where(np.isnan(X), np.nan, X), axis=0) if X.size else np.zeros(len(self.keys))
        col_mean = np.where(np.isnan(col_mean), 0.0, col_mean)
        X = np.where(np.isnan(X), col_mean, X)
        self.fill = col_mean
        y = np.array([int(s.target(task)) for s in train.samples], dtype=float)
        design = np.column_stack([np.ones(len(y)), X])
        if np.linalg.matrix_rank(design) < design.shape[1]:
            log.info("linear baseline design is rank-deficient; using the mean baseline")
            self.fallback = MeanBaseline()
            self.fallback.fit(train, task)
            self.coef = None
            return
        self.fallback = None
        self.coef, *_ = np.linalg.lstsq(design, y, rcond=None)

    def predict(self, window: BehavioralWindow) -> int:
        if self.fallback is not None:
            return self.fallback.predict(window)
        x = np.array([f if v is None else v for v, f in zip(window_means(window, self.keys), self.fill)])
        return clamp_round(self.coef[0] + x @ self.coef[1:])


class PipelinePredictor:
    """Greedy single-summary, single-prediction pass through the two prompts.

    Format violations and provider failures yield a missing prediction.
    """

    def __init__(
        self,
        provider: Provider,
        schema: FeatureSchema,
        require_tags: bool = True,
        temperature: float = 0.0,
        max_tokens: int = 1024,
    ):
        self.provider = provider
        self.schema = schema
        self.require_tags = require_tags
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.task: Optional[TaskKind] = None
        self.window_len = DEFAULT_WINDOW_LEN
        self.failures: list[str] = []

    def fit(self, train: Dataset, task: TaskKind) -> None:
        self.task = TaskKind.parse(task)
        self.window_len = train.window_len

    def predict(self, window: BehavioralWindow) -> Optional[int]:
        try:
            c1 = self.provider.sample(SampleRequest(render_stage1(window, self.schema, self.window_len), 1, self.temperature, self.max_tokens))[0]
            summary = extract_summary(c1.text, self.require_tags)
            if not summary.ok:
                self.failures.append(f"stage1: {summary.reason.value}")
                return None
            c2 = self.provider.sample(SampleRequest(render_stage2(summary.value, self.task), 1, self.temperature, self.max_tokens))[0]
        except ProviderError as exc:
            self.failures.append(f"provider: {exc}")
            return None
        score = extract_score(c2.text, self.require_tags)
        if not score.ok:
            self.failures.append(f"stage2: {score.reason.value}")
            return None
        return int(score.value)


# --- protocol ----------------------------------------------------------------

def _fold_seed(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, zlib.crc32(name.encode())])


def _child_seed(ss: np.random.SeedSequence, *labels: str) -> int:
    words = [zlib.crc32(label.encode()) for label in labels]
    return int(np.random.SeedSequence([*ss.entropy, *words]).generate_state(1, np.uint64)[0])


def _summarize(
    name: str, method: str, rows: list[PredictionRow], others: Mapping[str, list[PredictionRow]], B: int, ss
) -> FoldReport:
    present = [r for r in rows if r.pred is not None]
    missing = len(rows) - len(present)
    if not present:
        return FoldReport(name, method, 0, float("nan"), float("nan"), {}, missing)
    errs = [r.error for r in present]
    report = FoldReport(name, method, len(present), float(np.mean(errs)), bootstrap_se(errs, B, _child_seed(ss, method, "se")), {}, missing)
    for other, orows in others.items():
        if other == method:
            continue
        pairs = [(a.error, b.error) for a, b in zip(rows, orows) if a.pred is not None and b.pred is not None]
        if not pairs:
            continue
        ea, eb = zip(*pairs)
        report.comparisons[other] = paired_bootstrap(ea, eb, B, _child_seed(ss, method, other))
    return report


def run_loso(
    dataset: Dataset,
    folds: Sequence[Fold],
    task: TaskKind,
    predictors: Mapping[str, Callable[[], Predictor]],
    B: int = DEFAULT_RESAMPLES,
    seed: int = 0,
    jobs: int = 1,
) -> LosoReport:
    """Fit each method on each fold's train split and score it on the held-out subset.

    ``predictors`` maps a method name to a factory returning a fresh predictor,
    so folds never share fitted state. ``fit`` only ever sees the train split;
    ``predict`` only sees a window.
    """
    task = TaskKind.parse(task)
    methods = list(predictors)

    # canonical sample order so results do not depend on dataset row order
    def canon(i: int):
        s = dataset.samples[i]
        return (s.subset, s.subject_id, s.label_date)

    folds = sorted(folds, key=lambda f: f.name)

    def one_fold(fold: Fold) -> dict[str, list[PredictionRow]]:
        train = dataset.subset(sorted(fold.train, key=canon))
        test = sorted(fold.test, key=canon)
        out = {}
        for method, factory in predictors.items():
            model = factory()
            model.fit(train, task)
            rows = []
            for i in test:
                s = dataset.samples[i]
                pred = model.predict(s.window)
                rows.append(
                    PredictionRow(method, fold.name, i, s.subject_id, s.label_date.isoformat(), int(s.target(task)),
                                  None if pred is None else clamp_round(pred))
                )
            out[method] = rows
        return out

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_fold = list(pool.map(one_fold, folds))
    else:
        per_fold = [one_fold(f) for f in folds]

    fold_reports = []
    for fold, rows in zip(folds, per_fold):
        ss = _fold_seed(seed, fold.name)
        for method in methods:
            fold_reports.append(_summarize(fold.name, method, rows[method], rows, B, ss))

    pooled_rows = {m: [r for rows in per_fold for r in rows[m]] for m in methods}
    pooled = {}
    ss = _fold_seed(seed, "pooled")
    for method in methods:
        rep = _summarize("pooled", method, pooled_rows[method], pooled_rows, B, ss)
        fold_maes = [f.mae for f in fold_reports if f.method == method and f.n > 0]
        rep.fold_mean_mae = fold_average_mae(fold_maes) if fold_maes else None
        pooled[method] = rep
    all_rows = [r for m in methods for r in pooled_rows[m]]
    return LosoReport(task.value, methods, fold_reports, pooled, all_rows)


def format_table(report: Mapping) -> str:
    """Human-readable table of a report dict (as produced by ``LosoReport.to_dict``)."""
    lines = [f"task: {report['task']}"]
    header = f"{'fold':<10} {'method':<18} {'n':>5} {'miss':>5} {'MAE':>7} {'SE':>7}  comparisons (p, one-sided)"
    lines.append(header)
    lines.append("-" * len(header))
    entries = list(report["folds"]) + list(report["pooled"].values())
    for f in entries:
        comps = ", ".join(f"vs {k}: {v:.4f}{stars(v)}" for k, v in sorted(f["comparisons"].items()))
        lines.append(
            f"{f['fold']:<10} {f['method']:<18} {f['n']:>5} {f.get('n_missing', 0):>5} "
            f"{f['mae']:>7.3f} {f['se']:>7.3f}  {comps}"
        )
    for m, f in report["pooled"].items():
        if f.get("fold_mean_mae") is not None:
            lines.append(f"fold-averaged MAE [{m}]: {f['fold_mean_mae']:.3f}")
    return "\n".join(lines)
