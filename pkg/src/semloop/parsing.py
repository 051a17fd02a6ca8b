"""Post-processing of model completions: think-tag stripping, summary and score extraction."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Any, Optional

from .schema import SCORE_MAX, SCORE_MIN, Score

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"

# first "score:" token; sign and fraction are captured only to reject them
SCORE_RE = re.compile(r"(?<![A-Za-z0-9])score[ \t]*:[ \t]*([+-]?)([0-9]+)((?:\.[0-9]+)?)", re.IGNORECASE)


class Invalid(str, enum.Enum):
    MISSING_THINK_CLOSE = "missing-think-close"
    EMPTY_SUMMARY = "empty-summary"
    NO_SCORE_TOKEN = "no-score-token"
    SCORE_OUT_OF_RANGE = "score-out-of-range"
    NON_INTEGER_SCORE = "non-integer-score"


@dataclass(frozen=True)
class ParseOutcome:
    """Either a parsed payload (``reason is None``) or a format violation."""

    value: Any = None
    reason: Optional[Invalid] = None

    @property
    def ok(self) -> bool:
        return self.reason is None

    @classmethod
    def valid(cls, value: Any) -> "ParseOutcome":
        return cls(value=value)

    @classmethod
    def invalid(cls, reason: Invalid) -> "ParseOutcome":
        return cls(reason=Invalid(reason))

    def __repr__(self) -> str:
        return f"Valid({self.value!r})" if self.ok else f"Invalid({self.reason.value})"


def strip_think(completion: str, require_tags: bool = True) -> ParseOutcome:
    cut = completion.rfind(THINK_CLOSE)
    if cut >= 0:
        return ParseOutcome.valid(completion[cut + len(THINK_CLOSE):].strip())
    if THINK_OPEN in completion:
        return ParseOutcome.invalid(Invalid.MISSING_THINK_CLOSE)
    if require_tags:
        return ParseOutcome.invalid(Invalid.EMPTY_SUMMARY)
    return ParseOutcome.valid(completion.strip())


def extract_summary(completion: str, require_tags: bool = True) -> ParseOutcome:
    out = strip_think(completion, require_tags)
    if out.ok and not out.value:
        return ParseOutcome.invalid(Invalid.EMPTY_SUMMARY)
    return out


def extract_score(completion: str, require_tags: bool = True) -> ParseOutcome:
    out = strip_think(completion, require_tags)
    if not out.ok:
        return out
    m = SCORE_RE.search(out.value)
    if m is None:
        return ParseOutcome.invalid(Invalid.NO_SCORE_TOKEN)
    sign, digits, frac = m.groups()
    if sign or frac:
        return ParseOutcome.invalid(Invalid.NON_INTEGER_SCORE)
    v = int(digits)
    if not SCORE_MIN <= v <= SCORE_MAX:
        return ParseOutcome.invalid(Invalid.SCORE_OUT_OF_RANGE)
    return ParseOutcome.valid(Score(v))
