"""Stage-1 and Stage-2 prompt rendering.

The Stage-2 prompt is built from the summary text and the task name only,
so nothing about the raw window can reach the predictor except through the
summary.
"""

from __future__ import annotations

from decimal import ROUND_HALF_EVEN, Decimal
from functools import lru_cache
from typing import Optional

from .errors import EmptySummaryError
from .schema import DEFAULT_WINDOW_LEN, BehavioralWindow, FeatureSchema, TaskKind, validate_window

NOT_RECORDED = "not recorded"

STAGE1_HEADER = "You are analyzing {T} days of passive sensing data for one person.\nData (one block per day, oldest first):\n"
STAGE1_TASK = (
    "Task: Summarize this person's behavioral patterns, trajectories, and notable "
    "fluctuations over the full period in natural language. Do not restate every number."
)

STAGE2_PREFIX = "You are given a behavioral summary of one person's past two weeks.\nSummary:\n"
STAGE2_SUFFIX = (
    "\nBased only on this summary, infer the person's PHQ-4 {task} subscore, an integer "
    "from 0 to 6 where 0 means no symptoms and 6 means severe symptoms.\n"
    "Respond with exactly one line: score: <integer>"
)

_CENT = Decimal("0.01")


def format_value(x: float) -> str:
    """At most two decimals, half-to-even, trailing zeros trimmed (7.50 -> '7.5')."""
    q = Decimal(repr(float(x))).quantize(_CENT, rounding=ROUND_HALF_EVEN)
    text = format(q, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    if text == "-0":
        text = "0"
    return text


def _value_line(label: str, value: Optional[float], unit: str) -> str:
    if value is None:
        return f"- {label}: {NOT_RECORDED}"
    return f"- {label}: {format_value(value)} {unit}"


def render_stage1(w: BehavioralWindow, schema: FeatureSchema, window_len: int = DEFAULT_WINDOW_LEN) -> str:
    validate_window(w, schema, window_len)
    lines = [STAGE1_HEADER.format(T=len(w.days)).rstrip("\n")]
    for i, day in enumerate(w.days, start=1):
        lines.append(f"Day {i} ({day.date.isoformat()}):")
        for f in schema.features:
            lines.append(_value_line(f.label, day.get(f.key), f.unit))
    lines.append(STAGE1_TASK)
    return "\n".join(lines)


@lru_cache(maxsize=4096)
def _stage2(summary: str, task: TaskKind) -> str:
    return STAGE2_PREFIX + summary + STAGE2_SUFFIX.format(task=task.value)


def render_stage2(summary: str, task: TaskKind | str) -> str:
    summary = summary.strip()
    if not summary:
        raise EmptySummaryError("cannot build a Stage-2 prompt from an empty summary")
    return _stage2(summary, TaskKind.parse(task))


def summary_from_stage2(prompt: str) -> Optional[str]:
    """Recover the embedded summary from a Stage-2 prompt, or None if the prompt is not one."""
    if not prompt.startswith(STAGE2_PREFIX):
        return None
    body = prompt[len(STAGE2_PREFIX):]
    cut = body.rfind("\nBased only on this summary, infer")
    if cut < 0:
        return None
    return body[:cut]


def is_stage1(prompt: str) -> bool:
    return prompt.startswith("You are analyzing ") and prompt.endswith(STAGE1_TASK)
