"""Exact expected rewards for the toy policy, by enumeration.

These do not sample and do not touch the training code path; they serve as
the reference the trained policy is measured against.
"""

from __future__ import annotations

from collections import Counter
from typing import Sequence

import numpy as np

from .policy import N_SCORES, ToyConfig, ToyPolicyParams, softmax
from .prompting import render_stage1
from .reward import RewardSpec, gaussian_reward


def reward_table(spec: RewardSpec) -> np.ndarray:
    """7x7 table ``R[p, y]``."""
    return np.array([[gaussian_reward(p, y, spec) for y in range(N_SCORES)] for p in range(N_SCORES)])


def optimal_expected_reward(buckets: Sequence[int], labels: Sequence[int], cfg: ToyConfig, spec: RewardSpec) -> float:
    """Best achievable mean reward over all deterministic two-stage policies.

    A policy picks one template per bucket and one score per Stage-2 context.
    Templates that do not verbalize the bucket all share the uninformative
    context, so the score chosen there is a single global choice; the
    enumeration runs over that choice explicitly.
    """
    R = reward_table(spec)
    counts = Counter(zip(buckets, labels))
    n = len(labels)
    per_bucket = {b: np.zeros(N_SCORES) for b in range(cfg.buckets)}
    for (b, y), c in counts.items():
        per_bucket[b] += c * R[:, y]  # per_bucket[b][s] = total reward of answering s in bucket b
    best = -np.inf
    for s_shared in range(N_SCORES):
        total = 0.0
        for b in range(cfg.buckets):
            options = []
            for m, t in enumerate(cfg.templates):
                if t.verbalizes_bucket:
                    options.append(per_bucket[b].max())
                else:
                    options.append(per_bucket[b][s_shared])
            total += max(options)
        best = max(best, total)
    return float(best / n)


def expected_reward(
    params: ToyPolicyParams,
    buckets: Sequence[int],
    labels: Sequence[int],
    cfg: ToyConfig,
    spec: RewardSpec,
    temperature: float = 1.0,
) -> float:
    """Exact mean reward of the stochastic policy over the given (bucket, label) pairs."""
    R = reward_table(spec)
    p1 = softmax(params.stage1_logits, temperature)
    p2 = softmax(params.stage2_logits, temperature)
    total = 0.0
    for b, y in zip(buckets, labels):
        for m in range(cfg.n_templates):
            c = cfg.stage2_context(m, b)
            total += p1[b, m] * float(p2[c] @ R[:, y])
    return total / len(labels)



def bucket_labels(policy, dataset, task) -> tuple[list[int], list[int]]:
    """(bucket, label) for every sample, bucketed by parsing the rendered Stage-1 prompt."""
    buckets = [policy.bucketize(render_stage1(s.window, dataset.schema, dataset.window_len)) for s in dataset.samples]
    labels = [int(s.target(task)) for s in dataset.samples]
    return buckets, labels
