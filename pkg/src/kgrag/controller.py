"""Turn-level stopping rule: emit the answer or retrieve again."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum

from .kge import Reliability

__all__ = [
    "StopReason",
    "ThresholdSchedule",
    "StopDecision",
    "THETA0_TABLE",
    "UnknownTheta0Error",
    "resolve_theta0",
    "threshold_at",
    "decide",
]


class StopReason(str, Enum):
    BELOW_THRESHOLD = "below_threshold"
    MAX_TURNS = "max_turns"
    NO_EVIDENCE_POLICY = "no_evidence_policy"
    ABOVE_THRESHOLD = "above_threshold"


@dataclass(frozen=True)
class ThresholdSchedule:
    theta0: float
    c: float = 128.0
    max_turns: int = 2

    def __post_init__(self):
        if not (self.theta0 > 0 and math.isfinite(self.theta0)):
            raise ValueError(f"theta0 must be positive and finite, got {self.theta0!r}")
        if self.max_turns < 0:
            raise ValueError("max_turns must be >= 0")
        g = self.growth
        if not (math.isfinite(g) and g > 0):
            raise ValueError(f"growth ratio {g!r} is not finite and positive")

    @property
    def growth(self) -> float:
        """Per-turn multiplier ``c / (1 + exp(1 - theta0))``."""
        return self.c / (1.0 + math.exp(1.0 - self.theta0))


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    reason: StopReason
    s_t: float
    theta_t: float


# Keyed by (qa model, dataset); names are normalised by ``_key``.
THETA0_TABLE: dict[tuple[str, str], float] = {
    ("glm4-9b", "hotpotqa"): 10.0,
    ("glm4-9b", "2wikimultihopqa"): 2.0,
    ("glm4-9b", "popqa"): 0.1,
    ("qwen2.5-32b", "hotpotqa"): 1.0,
    ("qwen2.5-32b", "2wikimultihopqa"): 0.2,
    ("qwen2.5-32b", "popqa"): 0.02,
    ("gpt-4o-mini", "hotpotqa"): 13.0,
    ("gpt-4o-mini", "2wikimultihopqa"): 2.0,
    ("gpt-4o-mini", "popqa"): 0.01,
}

_DATASET_ALIASES = {"hotpot": "hotpotqa", "2wiki": "2wikimultihopqa", "pop": "popqa"}


def _norm(name: str) -> str:
    return re.sub(r"[^0-9a-z.]+", "", name.lower())


_TABLE_NORM = {(_norm(m), _norm(d)): v for (m, d), v in THETA0_TABLE.items()}


class UnknownTheta0Error(KeyError):
    pass


def resolve_theta0(qa_model: str | None, dataset: str | None, explicit: float | None = None) -> float:
    """Explicit value wins; otherwise look the pair up in :data:`THETA0_TABLE`."""
    if explicit is not None:
        return float(explicit)
    if qa_model is None or dataset is None:
        raise UnknownTheta0Error("theta0 not set and no (qa_model, dataset) pair to look it up")
    d = _norm(dataset)
    d = _norm(_DATASET_ALIASES.get(d, d))
    try:
        return _TABLE_NORM[(_norm(qa_model), d)]
    except KeyError:
        raise UnknownTheta0Error(
            f"no default theta0 for qa_model={qa_model!r}, dataset={dataset!r}; pass it explicitly"
        ) from None


def threshold_at(sched: ThresholdSchedule, t: int) -> float:
    """``theta0 * growth ** t``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return sched.theta0 * sched.growth ** t


def decide(sched: ThresholdSchedule, t: int, reliability: Reliability) -> StopDecision:
    """Stop when a verified answer scores below the threshold, or at the last turn.

    An answer with no verified triples never passes the threshold test.
    """
    if t > sched.max_turns:
        raise ValueError(f"turn {t} exceeds max_turns={sched.max_turns}")
    theta = threshold_at(sched, t)
    s = float(reliability.score)
    if reliability.verified > 0 and s < theta:
        return StopDecision(True, StopReason.BELOW_THRESHOLD, s, theta)
    if t == sched.max_turns:
        return StopDecision(True, StopReason.MAX_TURNS, s, theta)
    if reliability.verified == 0:
        return StopDecision(False, StopReason.NO_EVIDENCE_POLICY, s, theta)
    return StopDecision(False, StopReason.ABOVE_THRESHOLD, s, theta)
