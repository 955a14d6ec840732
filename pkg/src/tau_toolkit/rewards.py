"""Classification and summarization rewards plus the structured environment/grounding scores.

Match flags are inputs here; deciding whether a candidate matches a ground-truth
field is the judge's job.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from typing import Mapping, Sequence, Union

from .core import AnomalyClass, EnvAnnotation, IdentityAnnotation, LocationAnnotation, ParsedLabel

log = logging.getLogger(__name__)

INVALID_FORMAT = -2.0
FALSE_NEGATIVE = -1.50
FALSE_POSITIVE = -1.25
WRONG_SUBTYPE = -0.75
EXACT_MATCH = 1.5


def classification_reward(pred: "ParsedLabel | AnomalyClass | None", gt: AnomalyClass) -> float:
    if isinstance(pred, ParsedLabel):
        pred = pred.label
    if pred is None:
        return INVALID_FORMAT
    if pred == gt:
        return EXACT_MATCH
    if gt.is_abnormal and pred is AnomalyClass.A:
        return FALSE_NEGATIVE
    if gt is AnomalyClass.A:
        return FALSE_POSITIVE
    return WRONG_SUBTYPE


# --- judge verdicts ---

VERDICT_RANGES = {
    "env": (0.0, 1.0),
    "grounding": (0.0, 2.0),
    "description": (0.0, 5.0),
    "reasoning": (0.0, 2.0),
    "hallucination": (0.0, 3.0),
    "verbosity": (0.0, 1.0),
}


@dataclass(frozen=True)
class JudgeVerdict:
    """Six component scores; out-of-range values are clamped (with a warning) on construction."""

    env: float = 0.0
    grounding: float = 0.0
    description: float = 0.0
    reasoning: float = 0.0
    hallucination: float = 0.0
    verbosity: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            lo, hi = VERDICT_RANGES[f.name]
            value = float(getattr(self, f.name))
            if math.isnan(value):
                log.warning("verdict field %s is NaN; using 0", f.name)
                value = 0.0
            clamped = min(max(value, lo), hi)
            if clamped != value:
                log.warning("verdict field %s=%r clamped to %r", f.name, value, clamped)
            object.__setattr__(self, f.name, clamped)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in VERDICT_RANGES}

    @classmethod
    def from_dict(cls, d: Mapping) -> "JudgeVerdict":
        return cls(**{k: float(d.get(k, 0.0)) for k in VERDICT_RANGES})


def summarization_reward(verdict: JudgeVerdict) -> float:
    v = verdict
    return v.env + v.grounding + v.description + v.reasoning - v.hallucination - v.verbosity


def g_score(verdict: JudgeVerdict) -> float:
    """Judge total in [0, 10]; penalties are not part of it."""
    v = verdict
    return v.env + v.grounding + v.description + v.reasoning


# --- structured scores ---

ENV_WEIGHTS = {"time_of_day": 1.0, "weather": 1.0, "surface": 1.0, "road": 3.0}

MatchFlag = Union[bool, int, Sequence[bool]]


def _check_flags(specified: Mapping[str, bool], matches: Mapping[str, bool]) -> None:
    unknown = set(matches) - set(specified)
    if unknown:
        raise ValueError(f"match flags for unknown fields: {sorted(unknown)}")
    for name, flag in matches.items():
        if flag and not specified[name]:
            raise ValueError(f"match flag set for unspecified field {name!r}")


def _weighted_fraction(specified, matches, weights, default: float) -> float:
    denom = sum(weights[f] for f, s in specified.items() if s)
    if denom == 0:
        return default
    num = sum(weights[f] for f, s in specified.items() if s and matches.get(f, False))
    return num / denom


def env_score(gt: EnvAnnotation, matches: Mapping[str, bool]) -> float:
    """Weighted share of specified environment factors that the candidate got right.

    Road topology weighs 3, the other factors 1. Returns 1.0 when the ground
    truth specifies no factor.
    """
    specified = gt.specified()
    _check_flags(specified, matches)
    return _weighted_fraction(specified, matches, ENV_WEIGHTS, 1.0)


def identity_grounding_score(gt: IdentityAnnotation, matches: Mapping[str, bool]) -> float:
    specified = gt.specified()
    _check_flags(specified, matches)
    return _weighted_fraction(specified, matches, dict.fromkeys(specified, 1.0), 0.5)


def aggregate_phase_matches(phase_matches: MatchFlag) -> bool:
    """A multi-phase location field counts as matched if any phase matched."""
    if isinstance(phase_matches, (bool, int)):
        return bool(phase_matches)
    return any(bool(m) for m in phase_matches)


def location_grounding_score(gt: LocationAnnotation, matches: Mapping[str, MatchFlag]) -> float:
    specified = gt.specified()
    flat = {k: aggregate_phase_matches(v) for k, v in matches.items()}
    _check_flags(specified, flat)
    return _weighted_fraction(specified, flat, dict.fromkeys(specified, 1.0), 0.5)


def grounding_score(b1: float, b2: float) -> float:
    for name, v in (("b1", b1), ("b2", b2)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name}={v} outside [0, 1]")
    return b1 + b2
