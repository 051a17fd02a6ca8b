"""Two-stage rollouts, group-relative advantages and the KL-regularized update."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    GroupTooSmallError,
    InvalidConfigError,
    MissingDecisionsError,
    ProviderError,
    TransportError,
)
from .ingest import Dataset
from .parsing import Invalid, ParseOutcome, extract_score, extract_summary
from .policy import (
    Completion,
    Provider,
    ReferencePolicy,
    SampleRequest,
    ToyPolicy,
    ToyPolicyParams,
    log_softmax,
    softmax,
    toy_apply_update,
    toy_kl,
    toy_kl_grad,
)
from .prompting import render_stage1, render_stage2
from .reward import RewardSpec, trajectory_reward
from .schema import FeatureSchema, LabeledSample, TaskKind

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Trajectory:
    sample_ref: int
    stage1_prompt: str
    stage1_completion: Completion
    summary: ParseOutcome
    stage2_prompt: Optional[str]
    stage2_completion: Optional[Completion]
    prediction: Optional[ParseOutcome]
    reward: float
    error: Optional[str] = None

    @property
    def decisions(self):
        out = []
        for c in (self.stage1_completion, self.stage2_completion):
            if c is not None:
                if c.decisions is None:
                    return None
                out.extend(c.decisions)
        return out


@dataclass(frozen=True)
class AdvantageBatch:
    rewards: tuple[float, ...]
    mu: float
    sd: float
    epsilon: float
    advantages: tuple[float, ...]


@dataclass(frozen=True)
class TrainConfig:
    K: int = 8
    batch_samples: int = 32
    beta: float = 0.04
    lr: float = 5e-5
    steps: Optional[int] = None
    epochs: float = 3.0
    epsilon: float = 1e-4
    seed: int = 0
    temperature: float = 1.0
    population_std: bool = True
    checkpoint_every: int = 0
    optimizer: str = "adam"
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.K < 2:
            raise InvalidConfigError(f"group size K must be >= 2, got {self.K}")
        if self.beta < 0:
            raise InvalidConfigError("beta must be non-negative")
        if self.batch_samples < 1:
            raise InvalidConfigError("batch_samples must be >= 1")
        if self.epsilon <= 0:
            raise InvalidConfigError("epsilon must be positive")
        if self.temperature <= 0:
            raise InvalidConfigError("training temperature must be positive")
        if self.steps is not None and self.steps < 0:
            raise InvalidConfigError("steps must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")

    def total_steps(self, n_samples: int) -> int:
        if self.steps is not None:
            return self.steps
        return int(math.ceil(self.epochs * math.ceil(n_samples / self.batch_samples)))


def cosine_lr(lr0: float, step: int, total: int) -> float:
    """Cosine annealing from ``lr0`` at step 0 towards 0 at ``total``."""
    if total <= 0:
        return lr0
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * step / total))


def rollout_group(
    sample: LabeledSample,
    task: TaskKind,
    provider: Provider,
    spec: RewardSpec,
    K: int,
    rng: Optional[np.random.Generator] = None,
    *,
    schema: FeatureSchema,
    require_tags: bool = True,
    temperature: float = 1.0,
    max_tokens: int = 1024,
    sample_ref: int = 0,
    stage1_prompt: Optional[str] = None,
) -> list[Trajectory]:
    """K full Stage-1 -> Stage-2 trajectories for one labeled window."""
    if K < 2:
        raise GroupTooSmallError(f"a rollout group needs K >= 2, got {K}")
    y = sample.target(task)
    prompt1 = stage1_prompt if stage1_prompt is not None else render_stage1(sample.window, schema, len(sample.window.days))

    def seed() -> Optional[int]:
        return None if rng is None else int(rng.integers(2**63))

    # a failure of the whole Stage-1 group request aborts the group
    firsts = provider.sample(SampleRequest(prompt1, K, temperature, max_tokens, seed()))
    if len(firsts) != K:
        raise ProviderError(f"provider returned {len(firsts)} completions, expected {K}")

    out = []
    transport_failures = 0
    for c1 in firsts:
        summary = extract_summary(c1.text, require_tags)
        if not summary.ok:
            out.append(Trajectory(sample_ref, prompt1, c1, summary, None, None, None, 0.0))
            continue
        prompt2 = render_stage2(summary.value, task)
        try:
            c2 = provider.sample(SampleRequest(prompt2, 1, temperature, max_tokens, seed()))[0]
        except ProviderError as exc:
            transport_failures += isinstance(exc, TransportError)
            out.append(Trajectory(sample_ref, prompt1, c1, summary, prompt2, None, None, 0.0, error=str(exc)))
            continue
        pred = extract_score(c2.text, require_tags)
        out.append(
            Trajectory(sample_ref, prompt1, c1, summary, prompt2, c2, pred, trajectory_reward(summary, pred, y, spec))
        )
    if transport_failures == K:
        raise TransportError("every Stage-2 request in the group failed")
    return out


def normalize_advantages(rewards: Sequence[float], epsilon: float = 1e-4, population: bool = True) -> AdvantageBatch:
    """Group-standardized rewards ``(r - mean) / (std + epsilon)``.

    ``population=True`` divides by K; ``False`` uses the K-1 sample std.
    """
    r = np.asarray(rewards, dtype=float)
    K = r.size
    if K < 2:
        raise GroupTooSmallError(f"need at least 2 rewards per group, got {K}")
    if not epsilon > 0:
        raise InvalidConfigError("epsilon must be positive")
    # two-pass centering: constant groups come out exactly 0
    mu = math.fsum(r) / K
    c = r - mu
    corr = math.fsum(c) / K
    c -= corr
    mu += corr
    sd = math.sqrt(math.fsum(c * c) / (K if population else K - 1))
    adv = c / (sd + epsilon)
    return AdvantageBatch(tuple(float(x) for x in r), mu, sd, float(epsilon), tuple(float(a) for a in adv))


def _visited(groups) -> dict[int, set[int]]:
    seen: dict[int, set[int]] = {1: set(), 2: set()}
    for trajs, _ in groups:
        for t in trajs:
            ds = t.decisions
            if ds is None:
                raise MissingDecisionsError("trajectory carries no policy decisions; only trainable policies can be updated")
            for d in ds:
                seen[d.stage].add(d.context)
    return seen


def _weights(groups, params: ToyPolicyParams):
    w = {1: np.zeros_like(params.stage1_logits), 2: np.zeros_like(params.stage2_logits)}
    n = 0
    for trajs, batch in groups:
        for t, a in zip(trajs, batch.advantages):
            n += 1
            if a == 0.0:
                continue
            for d in t.decisions:
                w[d.stage][d.context, d.choice] += a
    return w, n


def grpo_objective_gradient(groups, params: ToyPolicyParams, ref: ReferencePolicy, beta: float, temperature: float = 1.0) -> ToyPolicyParams:
    """Gradient of ``mean_k A_k log pi(tau_k) - beta * KL(pi || ref)``.

    ``groups`` is a sequence of ``(trajectories, AdvantageBatch)``. The log-prob
    of a trajectory is the sum over its recorded decisions; KL is the exact
    per-context divergence averaged over contexts visited in the batch.
    """
    visited = _visited(groups)
    w, n = _weights(groups, params)
    grads = []
    for stage in (1, 2):
        wt = w[stage]
        p = softmax(params.logits(stage), temperature)
        # d/dl sum_j w_j log p_j = (w - sum(w) p) / T
        grads.append((wt - wt.sum(axis=1, keepdims=True) * p) / (temperature * max(n, 1)))
    pg = ToyPolicyParams(grads[0], grads[1])
    if beta == 0:
        return pg
    kg = toy_kl_grad(params, ref, visited)
    return ToyPolicyParams(pg.stage1_logits - beta * kg.stage1_logits, pg.stage2_logits - beta * kg.stage2_logits)


def grpo_surrogate(groups, params: ToyPolicyParams, ref: ReferencePolicy, beta: float, temperature: float = 1.0) -> float:
    """The sampled objective whose gradient ``grpo_objective_gradient`` returns."""
    visited = _visited(groups)
    lp = {1: log_softmax(params.stage1_logits, temperature), 2: log_softmax(params.stage2_logits, temperature)}
    total, n = 0.0, 0
    for trajs, batch in groups:
        for t, a in zip(trajs, batch.advantages):
            n += 1
            total += a * sum(lp[d.stage][d.context, d.choice] for d in t.decisions)
    return total / max(n, 1) - beta * toy_kl(params, ref, visited)


@dataclass
class TrainResult:
    params: ToyPolicyParams
    curve: list[dict] = field(default_factory=list)
    stable_step: Optional[int] = None


CURVE_COLUMNS = ("step", "mean_reward", "reward_std", "kl", "lr")


class AdamDirection:
    """Bias-corrected Adam moments; turns a raw gradient into an ascent direction."""

    def __init__(self, like: ToyPolicyParams, betas=(0.9, 0.999), eps: float = 1e-8):
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros_like(like.flat())
        self.v = np.zeros_like(self.m)
        self.t = 0

    def __call__(self, grad: ToyPolicyParams) -> ToyPolicyParams:
        g = grad.flat()
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return grad.with_flat(m_hat / (np.sqrt(v_hat) + self.eps))


def stabilized_step(mean_rewards: Sequence[float], window: int = 50, tol: float = 1e-3) -> Optional[int]:
    """First step where the rolling std of step-to-step mean-reward changes drops below ``tol``."""
    diffs = np.diff(np.asarray(mean_rewards, dtype=float))
    for end in range(window, diffs.size + 1):
        if diffs[end - window:end].std() < tol:
            return end
    return None


def train(
    dataset: Dataset,
    task: TaskKind,
    cfg: TrainConfig,
    spec: RewardSpec,
    policy: ToyPolicy,
    require_tags: bool = False,
    on_checkpoint: Optional[Callable[[int, ToyPolicyParams], None]] = None,
) -> TrainResult:
    """GRPO on a trainable policy; deterministic given ``cfg.seed``.

    Each step draws ``batch_samples`` windows, rolls out ``K`` trajectories
    per window, standardizes rewards within each group and takes one
    gradient-ascent step with the cosine-scheduled learning rate.
    """
    if len(dataset) == 0:
        raise InvalidConfigError("cannot train on an empty dataset")
    if not getattr(policy, "trainable", False):
        raise InvalidConfigError("training needs a trainable policy")
    task = TaskKind.parse(task)
    rng = np.random.default_rng(cfg.seed)
    policy.rng = np.random.default_rng(rng.integers(2**63))
    ref = ReferencePolicy.capture(policy.params)
    prompts = [render_stage1(s.window, dataset.schema, dataset.window_len) for s in dataset.samples]
    total = cfg.total_steps(len(dataset))
    result = TrainResult(policy.params)
    n = len(dataset)
    adam = AdamDirection(policy.params, cfg.adam_betas, cfg.adam_eps) if cfg.optimizer == "adam" else None
    for step in range(total):
        lr = cosine_lr(cfg.lr, step, total)
        idx = rng.choice(n, size=cfg.batch_samples, replace=cfg.batch_samples > n)
        groups = []
        rewards = []
        for i in idx:
            trajs = rollout_group(
                dataset.samples[i], task, policy, spec, cfg.K,
                schema=dataset.schema, require_tags=require_tags,
                temperature=cfg.temperature, sample_ref=int(i), stage1_prompt=prompts[i],
            )
            batch = normalize_advantages([t.reward for t in trajs], cfg.epsilon, cfg.population_std)
            groups.append((trajs, batch))
            rewards.extend(batch.rewards)
        params = policy.params
        kl = toy_kl(params, ref, _visited(groups))
        grad = grpo_objective_gradient(groups, params, ref, cfg.beta, cfg.temperature)
        policy.params = toy_apply_update(params, grad if adam is None else adam(grad), lr)
        r = np.asarray(rewards)
        result.curve.append(
            {"step": step, "mean_reward": float(r.mean()), "reward_std": float(r.std()), "kl": kl, "lr": lr}
        )
        if on_checkpoint is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            on_checkpoint(step + 1, policy.params)
    result.params = policy.params
    result.stable_step = stabilized_step([row["mean_reward"] for row in result.curve])
    return result
