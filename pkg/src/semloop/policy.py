"""Text-generation policies behind one sampling contract.

Three providers implement ``sample(SampleRequest) -> list[Completion]``:

* ``MockProvider`` replays scripted completions;
* ``RemoteProvider`` calls a chat-completions HTTP endpoint (evaluation only);
* ``ToyPolicy`` is a trainable two-decision categorical policy. Stage 1 picks
  one of M summary templates given the bucketed mean of a signal feature;
  Stage 2 picks one of the 7 scores given a context read off the summary text.
"""

from __future__ import annotations

import bisect
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, NamedTuple, Optional, Protocol, Sequence, Union

import httpx
import numpy as np

from .errors import (
    InvalidConfigError,
    MalformedResponseError,
    ProviderError,
    ProviderTimeoutError,
    ShapeMismatchError,
    TransportError,
    UnparseablePromptError,
)
from .prompting import NOT_RECORDED, is_stage1, summary_from_stage2
from .schema import SCORE_MAX, FeatureSchema

log = logging.getLogger(__name__)

API_KEY_ENV = "SEMLOOP_API_KEY"
N_SCORES = SCORE_MAX + 1


@dataclass(frozen=True)
class SampleRequest:
    prompt: str
    n: int = 1
    temperature: float = 1.0
    max_tokens: int = 1024
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise InvalidConfigError(f"n must be >= 1, got {self.n}")
        if self.temperature < 0:
            raise InvalidConfigError("temperature must be non-negative")


class Decision(NamedTuple):
    stage: int  # 1 or 2
    context: int
    choice: int


@dataclass(frozen=True)
class Completion:
    text: str
    logprob: Optional[float] = None
    decisions: Optional[tuple[Decision, ...]] = None

    def __post_init__(self) -> None:
        if self.logprob is not None and self.logprob > 0:
            raise ValueError(f"log-probability must be <= 0, got {self.logprob}")


class Provider(Protocol):
    def sample(self, req: SampleRequest) -> list[Completion]: ...


# --- scripted ---------------------------------------------------------------

class MockProvider:
    """Replays completions from a queue, or answers through a callable.

    ``script`` is either an iterable of strings consumed in order across calls
    or a function ``(prompt) -> str``.
    """

    def __init__(self, script: Union[Iterable[str], Callable[[str], str]]):
        self._fn = script if callable(script) else None
        self._queue = None if callable(script) else list(script)
        self._lock = threading.Lock()
        self.requests: list[SampleRequest] = []

    def sample(self, req: SampleRequest) -> list[Completion]:
        with self._lock:
            self.requests.append(req)
            if self._fn is not None:
                return [Completion(self._fn(req.prompt)) for _ in range(req.n)]
            if len(self._queue) < req.n:
                raise ProviderError(f"mock script exhausted: {len(self._queue)} left, {req.n} requested")
            out, self._queue = self._queue[: req.n], self._queue[req.n:]
            return [Completion(t) for t in out]


# --- remote HTTP ------------------------------------------------------------

@dataclass(frozen=True)
class ProviderConfig:
    base_url: str
    model: str
    temperature: float = 0.0
    max_tokens: int = 1024
    require_think_tags: bool = True
    timeout: float = 60.0
    supports_n: bool = True
    max_retries: int = 3
    backoff: float = 1.0


def _chat_url(base_url: str) -> str:
    base = base_url.rstrip("/")
    return base if base.endswith("/chat/completions") else base + "/chat/completions"


class RemoteProvider:
    """Chat-completions client. Evaluation only: exposes no parameters or gradients."""

    trainable = False

    def __init__(
        self,
        cfg: ProviderConfig,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
        api_key: Optional[str] = None,
    ):
        self.cfg = cfg
        self.url = _chat_url(cfg.base_url)
        self._sleep = sleep
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(timeout=cfg.timeout, headers=headers, transport=transport)
        self._lock = threading.Lock()

    def close(self) -> None:
        self._client.close()

    def _post(self, payload: dict) -> dict:
        delay = self.cfg.backoff
        for attempt in range(self.cfg.max_retries + 1):
            last = attempt == self.cfg.max_retries
            try:
                with self._lock:
                    resp = self._client.post(self.url, json=payload)
            except httpx.TimeoutException as exc:
                if last:
                    raise ProviderTimeoutError(f"request to {self.url} timed out") from exc
            except httpx.TransportError as exc:
                if last:
                    raise TransportError(f"cannot reach {self.url}: {exc}") from exc
            else:
                if resp.status_code == 429 or resp.status_code >= 500:
                    if last:
                        raise TransportError(f"{self.url} answered HTTP {resp.status_code}")
                elif resp.status_code >= 400:
                    raise ProviderError(f"{self.url} answered HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise MalformedResponseError("response body is not JSON") from exc
            log.warning("provider request failed (attempt %d), retrying in %.1fs", attempt + 1, delay)
            self._sleep(delay)
            delay *= 2
        raise AssertionError("unreachable")

    @staticmethod
    def _contents(data: dict) -> list[str]:
        try:
            choices = data["choices"]
            out = [c["message"]["content"] for c in choices]
        except (KeyError, TypeError) as exc:
            raise MalformedResponseError(f"no choices[*].message.content in response: {exc}") from None
        if not out or any(not isinstance(t, str) for t in out):
            raise MalformedResponseError("empty or non-text choices in response")
        return out

    def _request(self, req: SampleRequest, n: int) -> list[str]:
        payload = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "n": n,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.seed is not None:
            payload["seed"] = req.seed
        return self._contents(self._post(payload))

    def sample(self, req: SampleRequest) -> list[Completion]:
        texts: list[str] = []
        if self.cfg.supports_n:
            texts = self._request(req, req.n)[: req.n]
        while len(texts) < req.n:
            texts.extend(self._request(req, 1)[:1])
        return [Completion(t) for t in texts]


# --- trainable toy policy ---------------------------------------------------

@dataclass(frozen=True)
class ToyTemplate:
    text: str
    verbalizes_bucket: bool = False


DEFAULT_TEMPLATES = (
    ToyTemplate("Across the two weeks, {label} stayed at level {level} of {levels}.", True),
    ToyTemplate("Daily routines looked broadly regular with ordinary day-to-day fluctuation."),
    ToyTemplate("Several behavioral signals varied over the period without a clear overall trend."),
    ToyTemplate("The person alternated between more active and quieter days."),
)


@dataclass(frozen=True)
class ToyConfig:
    """Featurization of the toy policy: which feature it reads and how it buckets it."""

    signal_label: str
    signal_unit: str
    lo: float
    hi: float
    buckets: int = 8
    templates: tuple[ToyTemplate, ...] = DEFAULT_TEMPLATES
    think: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "templates", tuple(self.templates))
        if self.buckets < 2 or len(self.templates) < 2:
            raise InvalidConfigError("toy policy needs >= 2 buckets and >= 2 templates")
        if not self.hi > self.lo:
            raise InvalidConfigError("toy bucket range needs hi > lo")

    @classmethod
    def for_feature(cls, schema: FeatureSchema, key: str, lo: float, hi: float, **kw) -> "ToyConfig":
        f = schema.feature(key)
        return cls(signal_label=f.label, signal_unit=f.unit, lo=lo, hi=hi, **kw)

    @property
    def n_templates(self) -> int:
        return len(self.templates)

    @property
    def n_contexts(self) -> int:
        return self.n_templates * self.buckets + 1

    @property
    def uninformative(self) -> int:
        return self.n_contexts - 1

    def summary_text(self, template: int, bucket: int) -> str:
        t = self.templates[template]
        if not t.verbalizes_bucket:
            return t.text
        return t.text.format(label=self.signal_label, level=bucket + 1, levels=self.buckets)

    def stage2_context(self, template: int, bucket: int) -> int:
        if self.templates[template].verbalizes_bucket:
            return template * self.buckets + bucket
        return self.uninformative


@dataclass(frozen=True)
class ToyPolicyParams:
    stage1_logits: np.ndarray  # [buckets, templates]
    stage2_logits: np.ndarray  # [contexts, 7]

    def __post_init__(self) -> None:
        s1 = np.array(self.stage1_logits, dtype=float)
        s2 = np.array(self.stage2_logits, dtype=float)
        if s1.ndim != 2 or s1.shape[0] < 2 or s1.shape[1] < 2:
            raise ShapeMismatchError(f"stage1_logits must be [B>=2, M>=2], got {s1.shape}")
        if s2.ndim != 2 or s2.shape[0] < 1 or s2.shape[1] != N_SCORES:
            raise ShapeMismatchError(f"stage2_logits must be [C>=1, 7], got {s2.shape}")
        if not (np.isfinite(s1).all() and np.isfinite(s2).all()):
            raise ValueError("policy logits must be finite")
        s1.setflags(write=False)
        s2.setflags(write=False)
        object.__setattr__(self, "stage1_logits", s1)
        object.__setattr__(self, "stage2_logits", s2)

    @classmethod
    def uniform(cls, cfg: ToyConfig) -> "ToyPolicyParams":
        return cls(np.zeros((cfg.buckets, cfg.n_templates)), np.zeros((cfg.n_contexts, N_SCORES)))

    @classmethod
    def zeros_like(cls, other: "ToyPolicyParams") -> "ToyPolicyParams":
        return cls(np.zeros_like(other.stage1_logits), np.zeros_like(other.stage2_logits))

    def logits(self, stage: int) -> np.ndarray:
        return self.stage1_logits if stage == 1 else self.stage2_logits

    def same_shape(self, other: "ToyPolicyParams") -> bool:
        return (
            self.stage1_logits.shape == other.stage1_logits.shape
            and self.stage2_logits.shape == other.stage2_logits.shape
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([self.stage1_logits.ravel(), self.stage2_logits.ravel()])

    def with_flat(self, v: np.ndarray) -> "ToyPolicyParams":
        n1 = self.stage1_logits.size
        return ToyPolicyParams(
            np.asarray(v[:n1]).reshape(self.stage1_logits.shape),
            np.asarray(v[n1:]).reshape(self.stage2_logits.shape),
        )

    def to_dict(self) -> dict:
        return {"stage1_logits": self.stage1_logits.tolist(), "stage2_logits": self.stage2_logits.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ToyPolicyParams":
        return cls(np.array(d["stage1_logits"], dtype=float), np.array(d["stage2_logits"], dtype=float))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ToyPolicyParams):
            return NotImplemented
        return bool(
            np.array_equal(self.stage1_logits, other.stage1_logits)
            and np.array_equal(self.stage2_logits, other.stage2_logits)
        )

    __hash__ = None


@dataclass(frozen=True)
class ReferencePolicy:
    """Frozen snapshot of the parameters taken when training starts."""

    params: ToyPolicyParams

    @classmethod
    def capture(cls, params: ToyPolicyParams) -> "ReferencePolicy":
        return cls(ToyPolicyParams(params.stage1_logits.copy(), params.stage2_logits.copy()))


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``logits / temperature``; temperature 0 is a one-hot argmax."""
    logits = np.asarray(logits, dtype=float)
    if temperature == 0:
        out = np.zeros_like(logits)
        idx = np.argmax(logits, axis=-1)
        np.put_along_axis(out, np.expand_dims(idx, -1), 1.0, axis=-1)
        return out
    z = logits / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, dtype=float) / temperature
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def log_softmax_grad(logits: np.ndarray, choice: int, temperature: float = 1.0) -> np.ndarray:
    """Gradient of ``log softmax(logits / T)[choice]`` with respect to ``logits``."""
    g = -softmax(logits, temperature)
    g[choice] += 1.0
    return g / temperature


def categorical_kl(p_logits: np.ndarray, q_logits: np.ndarray) -> float:
    lp, lq = log_softmax(p_logits), log_softmax(q_logits)
    p = np.exp(lp)
    return float(np.sum(p * (lp - lq)))


def toy_kl(params: ToyPolicyParams, ref: ReferencePolicy, visited: Mapping[int, Iterable[int]]) -> float:
    """Mean exact KL(policy || reference) over visited (stage, context) pairs."""
    total, count = 0.0, 0
    for stage, ctxs in visited.items():
        a, b = params.logits(stage), ref.params.logits(stage)
        for c in ctxs:
            total += categorical_kl(a[c], b[c])
            count += 1
    return total / count if count else 0.0


def toy_kl_grad(params: ToyPolicyParams, ref: ReferencePolicy, visited: Mapping[int, Iterable[int]]) -> ToyPolicyParams:
    """Gradient of ``toy_kl`` with respect to both logit tables."""
    g1 = np.zeros_like(params.stage1_logits)
    g2 = np.zeros_like(params.stage2_logits)
    pairs = [(s, c) for s, ctxs in visited.items() for c in ctxs]
    if pairs:
        for stage, c in pairs:
            lp = log_softmax(params.logits(stage)[c])
            lq = log_softmax(ref.params.logits(stage)[c])
            p = np.exp(lp)
            kl = float(np.sum(p * (lp - lq)))
            (g1 if stage == 1 else g2)[c] += p * (lp - lq - kl)
        g1 /= len(pairs)
        g2 /= len(pairs)
    return ToyPolicyParams(g1, g2)


def toy_apply_update(params: ToyPolicyParams, gradient: ToyPolicyParams, lr: float) -> ToyPolicyParams:
    """Gradient-ascent step ``params + lr * gradient``; returns new params."""
    if not params.same_shape(gradient):
        raise ShapeMismatchError("gradient shape does not match parameters")
    return ToyPolicyParams(
        params.stage1_logits + lr * gradient.stage1_logits,
        params.stage2_logits + lr * gradient.stage2_logits,
    )


def _sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(i, len(probs) - 1)


class ToyPolicy:
    """Trainable categorical stand-in for the shared summarizer/predictor model."""

    trainable = True

    def __init__(self, cfg: ToyConfig, params: Optional[ToyPolicyParams] = None, seed: int = 0):
        self.cfg = cfg
        self._params = params if params is not None else ToyPolicyParams.uniform(cfg)
        if self._params.stage1_logits.shape != (cfg.buckets, cfg.n_templates) or self._params.stage2_logits.shape[0] != cfg.n_contexts:
            raise ShapeMismatchError("parameters do not fit the toy configuration")
        self.rng = np.random.default_rng(seed)
        self._edges = [cfg.lo + (cfg.hi - cfg.lo) * k / cfg.buckets for k in range(1, cfg.buckets)]
        self._line = re.compile(r"^- " + re.escape(cfg.signal_label) + r": (.*)$", re.MULTILINE)
        self._bucket_cache: dict[str, int] = {}
        self._summary_ctx = {}
        for m in range(cfg.n_templates):
            for b in range(cfg.buckets):
                self._summary_ctx.setdefault(cfg.summary_text(m, b), cfg.stage2_context(m, b))
        self._probs: dict[tuple[int, float], np.ndarray] = {}
        self._logp: dict[tuple[int, float], np.ndarray] = {}

    @property
    def params(self) -> ToyPolicyParams:
        return self._params

    @params.setter
    def params(self, value: ToyPolicyParams) -> None:
        if not value.same_shape(self._params):
            raise ShapeMismatchError("new parameters have a different shape")
        self._params = value
        self._probs.clear()
        self._logp.clear()

    def _tables(self, stage: int, temperature: float) -> tuple[np.ndarray, np.ndarray]:
        key = (stage, temperature)
        if key not in self._probs:
            logits = self._params.logits(stage)
            self._probs[key] = softmax(logits, temperature)
            if temperature == 0:
                self._logp[key] = np.where(self._probs[key] > 0, 0.0, -np.inf)
            else:
                self._logp[key] = log_softmax(logits, temperature)
        return self._probs[key], self._logp[key]

    def bucket_of_mean(self, mean: float) -> int:
        # bisect_right: a value on an edge opens the next bucket ([lo, hi) intervals)
        return min(bisect.bisect_right(self._edges, mean), self.cfg.buckets - 1)

    def bucketize(self, prompt: str) -> int:
        """Bucket of the mean recorded signal value in a Stage-1 prompt."""
        hit = self._bucket_cache.get(prompt)
        if hit is not None:
            return hit
        if not is_stage1(prompt):
            raise UnparseablePromptError("not a Stage-1 prompt")
        suffix = " " + self.cfg.signal_unit
        vals = []
        for m in self._line.finditer(prompt):
            cell = m.group(1)
            if cell == NOT_RECORDED:
                continue
            if not cell.endswith(suffix):
                raise UnparseablePromptError(f"unexpected value cell {cell!r}")
            try:
                vals.append(float(cell[: -len(suffix)]))
            except ValueError:
                raise UnparseablePromptError(f"unexpected value cell {cell!r}") from None
        if not vals:
            raise UnparseablePromptError(f"no recorded values for {self.cfg.signal_label!r}")
        b = self.bucket_of_mean(math.fsum(vals) / len(vals))
        self._bucket_cache[prompt] = b
        return b

    def context_of_summary(self, summary: str) -> int:
        return self._summary_ctx.get(summary.strip(), self.cfg.uninformative)

    def generate_stage1(self, ctx: int, temperature: float, rng: np.random.Generator) -> Completion:
        if not 0 <= ctx < self.cfg.buckets:
            raise ValueError(f"stage-1 context {ctx} outside 0..{self.cfg.buckets - 1}")
        probs, logp = self._tables(1, temperature)
        m = int(np.argmax(probs[ctx])) if temperature == 0 else _sample_index(probs[ctx], rng)
        text = self.cfg.summary_text(m, ctx)
        if self.cfg.think:
            text = f"<think>Reviewing {self.cfg.signal_label}.</think>\n{text}"
        return Completion(text, float(logp[ctx, m]), (Decision(1, ctx, m),))

    def generate_stage2(self, summary: str, temperature: float, rng: np.random.Generator) -> Completion:
        c = self.context_of_summary(summary)
        probs, logp = self._tables(2, temperature)
        s = int(np.argmax(probs[c])) if temperature == 0 else _sample_index(probs[c], rng)
        text = f"score: {s}"
        if self.cfg.think:
            text = f"<think>Weighing the summary.</think>\n{text}"
        return Completion(text, float(logp[c, s]), (Decision(2, c, s),))

    def sample(self, req: SampleRequest) -> list[Completion]:
        rng = self.rng if req.seed is None else np.random.default_rng(req.seed)
        summary = summary_from_stage2(req.prompt)
        if summary is not None:
            return [self.generate_stage2(summary, req.temperature, rng) for _ in range(req.n)]
        ctx = self.bucketize(req.prompt)
        return [self.generate_stage1(ctx, req.temperature, rng) for _ in range(req.n)]

    def stage2_distribution(self, summary: str, temperature: float = 1.0) -> np.ndarray:
        return self._tables(2, temperature)[0][self.context_of_summary(summary)].copy()

    def stage1_distribution(self, bucket: int, temperature: float = 1.0) -> np.ndarray:
        return self._tables(1, temperature)[0][bucket].copy()
