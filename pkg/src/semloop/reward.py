"""Gaussian ordinal reward with a hard zero on format violations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .errors import InvalidConfigError
from .parsing import ParseOutcome
from .schema import SCORE_MAX, SCORE_MIN, Score

DEFAULT_SIGMA = 1.2


@dataclass(frozen=True)
class RewardSpec:
    sigma: float = DEFAULT_SIGMA
    score_min: int = SCORE_MIN
    score_max: int = SCORE_MAX

    def __post_init__(self) -> None:
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise InvalidConfigError(f"reward.sigma must be positive, got {self.sigma}")


def gaussian_reward(p: int, y: int, spec: RewardSpec = RewardSpec()) -> float:
    """exp(-(p - y)^2 / (2 sigma^2)); 1.0 exactly when p == y."""
    p, y = Score(p), Score(y)
    d = int(p) - int(y)
    return math.exp(-(d * d) / (2.0 * spec.sigma * spec.sigma))


def trajectory_reward(
    stage1: ParseOutcome,
    stage2: Optional[ParseOutcome],
    y: int,
    spec: RewardSpec = RewardSpec(),
) -> float:
    if not stage1.ok or stage2 is None or not stage2.ok:
        return 0.0
    return gaussian_reward(stage2.value, y, spec)
