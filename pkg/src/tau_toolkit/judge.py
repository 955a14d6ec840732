"""Judge verdicts for candidate summaries: a remote LLM judge and a rule-based oracle."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

from .chat import ChatClient, TransportError
from .core import DecomposedAnnotation, EnvAnnotation, IdentityAnnotation, LocationAnnotation, TauError
from .metrics import rouge_l
from .prompts import read_asset
from .rewards import (
    VERDICT_RANGES,
    JudgeVerdict,
    env_score,
    grounding_score,
    identity_grounding_score,
    location_grounding_score,
)

log = logging.getLogger(__name__)

DEFAULT_MODEL = "gpt-5-mini-2025-08-07"
DEFAULT_REASONING = "low"
API_KEY_ENV = "TAU_JUDGE_API_KEY"
MODES = ("eval", "reward")


class JudgeParseError(TauError):
    pass


class JudgeUnavailableError(TauError):
    def __init__(self, clip_id, attempts: int, cause: Exception):
        super().__init__(f"judge unavailable for clip {clip_id} after {attempts} attempts: {cause}")
        self.clip_id = clip_id
        self.attempts = attempts
        self.cause = cause


@dataclass(frozen=True)
class JudgeRequest:
    mode: str
    gt_annotation: DecomposedAnnotation
    candidate_summary: str
    model_name: str
    reasoning_level: str
    system: str
    user: str

    def payload(self) -> dict:
        return {
            "model": self.model_name,
            "messages": [
                {"role": "system", "content": self.system},
                {"role": "user", "content": self.user},
            ],
            "reasoning_effort": self.reasoning_level,
        }


@dataclass(frozen=True)
class JudgeResponse:
    raw: str
    verdict: JudgeVerdict
    attempts: int


def build_judge_request(gt: DecomposedAnnotation, candidate: str, mode: str = "eval",
                        model: str = DEFAULT_MODEL, reasoning: str = DEFAULT_REASONING,
                        include_annotation: bool = True, template_dir=None) -> JudgeRequest:
    """Rubric prompt for one candidate.

    With ``include_annotation`` the judge also sees the decomposed ground truth;
    otherwise only the reference summary text.
    """
    if mode not in MODES:
        raise TauError(f"unknown judge mode {mode!r}")
    if not gt.summary.strip():
        raise TauError("ground-truth summary is empty")
    system = read_asset(f"judge_{mode}.txt", template_dir).rstrip("\n")
    parts = [f"GROUND TRUTH SUMMARY:\n{gt.summary.strip()}"]
    if include_annotation:
        ann = gt.to_dict()
        ann.pop("summary")
        parts.append("GROUND TRUTH ANNOTATION (JSON):\n" + json.dumps(ann, sort_keys=True, ensure_ascii=False))
    parts.append(f"CANDIDATE SUMMARY:\n{(candidate or '').strip()}")
    return JudgeRequest(mode, gt, candidate, model, reasoning, system, "\n\n".join(parts))


def _first_json_object(raw: str) -> Optional[dict]:
    decoder = json.JSONDecoder()
    start = raw.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(raw, start)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            return obj
        start = raw.find("{", start + 1)
    return None


def parse_judge_response(raw: str) -> JudgeVerdict:
    obj = _first_json_object(raw or "")
    if obj is None:
        raise JudgeParseError(f"no JSON object in judge output: {raw[:80]!r}")
    values = {}
    for key in VERDICT_RANGES:
        if key not in obj:
            log.warning("judge output lacks %r; using 0", key)
            values[key] = 0.0
            continue
        try:
            values[key] = float(obj[key])
        except (TypeError, ValueError):
            log.warning("judge output has non-numeric %r=%r; using 0", key, obj[key])
            values[key] = 0.0
    return JudgeVerdict(**values)


def remote_judge(client: ChatClient, request: JudgeRequest, clip_id=None, max_retries: int = 3,
                 backoff_base: float = 1.0, backoff_factor: float = 2.0,
                 sleep: Callable[[float], None] = time.sleep) -> JudgeResponse:
    """Query the judge, retrying transport and parse failures with exponential backoff."""
    last: Exception = TauError("no attempt made")
    for attempt in range(1, max_retries + 2):
        try:
            raw, _ = client.complete(request.payload())
            return JudgeResponse(raw, parse_judge_response(raw), attempt)
        except (TransportError, JudgeParseError) as exc:
            last = exc
            log.warning("judge attempt %d for clip %s failed: %s", attempt, clip_id, exc)
            if attempt <= max_retries:
                sleep(backoff_base * backoff_factor ** (attempt - 1))
    raise JudgeUnavailableError(clip_id, max_retries + 1, last)


def judge_batch(client: ChatClient, requests: Mapping[str, JudgeRequest], concurrency: int = 4,
                **kwargs) -> dict[str, Optional[JudgeResponse]]:
    """Judge many clips with at most ``concurrency`` requests in flight.

    Clips whose judge stays unavailable map to ``None``.
    """

    def one(item):
        clip_id, req = item
        try:
            return clip_id, remote_judge(client, req, clip_id=clip_id, **kwargs)
        except JudgeUnavailableError as exc:
            log.error("%s", exc)
            return clip_id, None

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        return dict(pool.map(one, requests.items()))


# --- rule-based oracle ---


def _norm(s: Optional[str]) -> str:
    return " ".join((s or "").lower().split())


def _field_matches(gt_obj, cand_obj, fields) -> dict[str, bool]:
    out = {}
    for f in fields:
        g = _norm(getattr(gt_obj, f))
        out[f] = bool(g) and g == _norm(getattr(cand_obj, f))
    return out


def _location_matches(gt: LocationAnnotation, cand: LocationAnnotation) -> dict[str, list[bool]]:
    out = {}
    for f in LocationAnnotation.FIELDS:
        cand_phases = {_norm(p) for p in (getattr(cand, f) or ()) if _norm(p)}
        out[f] = [bool(_norm(p)) and _norm(p) in cand_phases for p in (getattr(gt, f) or ())]
    return out


def rule_based_judge(gt: DecomposedAnnotation, candidate: DecomposedAnnotation) -> JudgeVerdict:
    """Deterministic stand-in for the LLM judge, for tests and offline runs.

    Environment and grounding use exact case-insensitive equality as the match
    rule. Description and reasoning are scaled ROUGE-L, a proxy rather than a
    semantic judgment. No penalties.
    """
    env = env_score(gt.env, _field_matches(gt.env, candidate.env, EnvAnnotation.FIELDS))
    b1 = identity_grounding_score(
        gt.identity, _field_matches(gt.identity, candidate.identity, IdentityAnnotation.FIELDS))
    b2 = location_grounding_score(gt.location, _location_matches(gt.location, candidate.location))
    return JudgeVerdict(
        env=env,
        grounding=grounding_score(b1, b2),
        description=5.0 * rouge_l(candidate.description, gt.description),
        reasoning=2.0 * rouge_l(candidate.reasoning, gt.reasoning),
        hallucination=0.0,
        verbosity=0.0,
    )
