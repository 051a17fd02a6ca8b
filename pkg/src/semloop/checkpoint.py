"""Toy-policy checkpoints and the predictor that evaluates them."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional

from .errors import InvalidConfigError, LeakageError
from .evaluation import PipelinePredictor
from .ingest import Dataset
from .policy import ToyConfig, ToyPolicy, ToyPolicyParams, ToyTemplate
from .schema import BehavioralWindow, FeatureSchema, TaskKind

FORMAT = "semloop-toy-checkpoint/1"


@dataclass(frozen=True)
class Checkpoint:
    params: ToyPolicyParams
    toy: ToyConfig
    schema: FeatureSchema
    task: TaskKind
    trained_subsets: tuple[str, ...]
    seed: int
    config_hash: str
    steps: int

    def to_dict(self) -> dict:
        toy = asdict(self.toy)
        return {
            "format": FORMAT,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "task": self.task.value,
            "steps": self.steps,
            "trained_subsets": list(self.trained_subsets),
            "schema": self.schema.to_dict(),
            "toy": toy,
            "params": self.params.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        if d.get("format") != FORMAT:
            raise InvalidConfigError(f"not a toy checkpoint (format {d.get('format')!r})")
        t = dict(d["toy"])
        t["templates"] = tuple(ToyTemplate(**x) for x in t["templates"])
        return cls(
            params=ToyPolicyParams.from_dict(d["params"]),
            toy=ToyConfig(**t),
            schema=FeatureSchema.from_dict(d["schema"]),
            task=TaskKind.parse(d["task"]),
            trained_subsets=tuple(d["trained_subsets"]),
            seed=int(d["seed"]),
            config_hash=str(d["config_hash"]),
            steps=int(d["steps"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise InvalidConfigError(f"{path}: malformed checkpoint ({exc})") from None


class ToyPredictor:
    """Greedy two-stage rollout of a toy policy through the real prompt/parse path.

    With a checkpoint the parameters are fixed, and ``fit`` refuses any fold
    whose held-out subset the checkpoint was trained on. Without one, ``trainer``
    is called on each fold's train split.
    """

    def __init__(
        self,
        checkpoint: Optional[Checkpoint] = None,
        trainer: Optional[Callable[[Dataset, TaskKind], ToyPolicy]] = None,
    ):
        if (checkpoint is None) == (trainer is None):
            raise ValueError("give exactly one of checkpoint or trainer")
        self.checkpoint = checkpoint
        self.trainer = trainer
        self._inner: Optional[PipelinePredictor] = None

    def fit(self, train: Dataset, task: TaskKind) -> None:
        task = TaskKind.parse(task)
        if self.checkpoint is not None:
            ck = self.checkpoint
            if ck.schema.keys != train.schema.keys:
                raise InvalidConfigError("checkpoint schema does not match the dataset")
            if ck.task is not task:
                raise InvalidConfigError(f"checkpoint was trained for {ck.task.value}, evaluating {task.value}")
            outside = sorted(set(ck.trained_subsets) - set(train.subsets))
            if outside:
                raise LeakageError(f"checkpoint was trained on held-out subset(s) {', '.join(outside)}")
            policy = ToyPolicy(ck.toy, ck.params)
        else:
            policy = self.trainer(train, task)
        self._inner = PipelinePredictor(policy, train.schema, require_tags=policy.cfg.think, temperature=0.0)
        self._inner.fit(train, task)

    @property
    def failures(self) -> list[str]:
        return [] if self._inner is None else self._inner.failures

    def predict(self, window: BehavioralWindow) -> Optional[int]:
        if self._inner is None:
            raise RuntimeError("fit must be called before predict")
        return self._inner.predict(window)
