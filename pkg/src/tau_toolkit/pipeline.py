"""Two-layer inference: a light classifier filters clips, a larger model summarizes the anomalous ones.

Clips the classifier labels A (normal) without error stop after the first
layer. Everything else, including unparseable or failed classifications, goes
to the summarizer, because missing an anomaly costs more than a false alarm.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Protocol, Sequence, Union

from .chat import BackendTimeout, ChatClient, TransportError
from .core import AnomalyClass, ParsedLabel, TauError, VideoClip, parse_anomaly_label
from .profiler import STAGES, StageTimings
from .prompts import PromptSet

log = logging.getLogger(__name__)

# Frame sampling hints forwarded to backends that honour them.
DEFAULT_VIDEO_PARAMS = {"fps": 2, "max_frames": 180, "min_video_tokens": 32, "max_video_tokens": 256}


@dataclass(frozen=True)
class InferenceRequest:
    clip_id: str
    system_prompt: str
    user_prompt: str
    media_ref: str = ""
    generation_params: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class InferenceResult:
    text: str
    timings: StageTimings


class InferenceBackend(Protocol):
    def generate(self, request: InferenceRequest) -> InferenceResult:
        """Return text and timings, or raise TransportError / BackendTimeout."""
        ...


class MockBackend:
    """Scripted backend: ``script`` maps clip ids to response text or an exception to raise."""

    def __init__(self, script: Optional[Mapping[str, Union[str, BaseException]]] = None,
                 per_call_delay: float = 0.0, default_response: Union[str, BaseException] = "A"):
        self.script = dict(script or {})
        self.per_call_delay = per_call_delay
        self.default_response = default_response
        self.calls: list[InferenceRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def perfect_classifier(cls, clips: Sequence[VideoClip], **kwargs) -> "MockBackend":
        return cls({c.clip_id: c.label.value for c in clips}, **kwargs)

    @classmethod
    def from_script(cls, doc: Mapping, default_response: str) -> "MockBackend":
        """Build from JSON: values are text, or ``{"error": "timeout" | "<message>"}``."""
        script = {}
        for clip_id, value in (doc.get("responses") or {}).items():
            if isinstance(value, Mapping):
                err = str(value.get("error", "error"))
                script[clip_id] = BackendTimeout(f"scripted timeout for {clip_id}") if err == "timeout" \
                    else TransportError(f"scripted error for {clip_id}: {err}")
            else:
                script[clip_id] = str(value)
        return cls(script, float(doc.get("delay_ms", 0.0)) / 1000.0, doc.get("default", default_response))

    def generate(self, request: InferenceRequest) -> InferenceResult:
        with self._lock:
            self.calls.append(request)
        start = time.perf_counter()
        if self.per_call_delay:
            time.sleep(self.per_call_delay)
        gen_ms = (time.perf_counter() - start) * 1000.0
        response = self.script.get(request.clip_id, self.default_response)
        if isinstance(response, BaseException):
            raise response
        total_ms = (time.perf_counter() - start) * 1000.0
        return InferenceResult(response, StageTimings(model_generation_ms=gen_ms, total_ms=max(total_ms, gen_ms)))

    @property
    def call_count(self) -> int:
        return len(self.calls)


def mock_backend(script=None, per_call_delay: float = 0.0, default_response="A") -> MockBackend:
    return MockBackend(script, per_call_delay, default_response)


class ChatCompletionBackend:
    """Live backend over the chat-completion wire shape, with an optional ``video_url`` part."""

    def __init__(self, client: ChatClient, model: str, generation_params: Optional[Mapping] = None):
        self.client = client
        self.model = model
        self.generation_params = dict(generation_params or {})

    def build_payload(self, request: InferenceRequest) -> dict:
        content: list[dict] = [{"type": "text", "text": request.user_prompt}]
        if request.media_ref:
            content.append({"type": "video_url", "video_url": {"url": request.media_ref}})
        params = {**self.generation_params, **request.generation_params}
        video = params.pop("video", None)
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": content},
            ],
            **params,
        }
        if video:
            payload["mm_processor_kwargs"] = dict(video)
        return payload

    def generate(self, request: InferenceRequest) -> InferenceResult:
        start = time.perf_counter()
        payload = self.build_payload(request)
        built = time.perf_counter()
        text, body = self.client.complete(payload)
        end = time.perf_counter()
        # stage attribution only from server-reported fields; the rest stays unattributed in total
        reported = body.get("timings") if isinstance(body, dict) else None
        stages = {}
        if isinstance(reported, Mapping):
            stages = {k: float(reported[k]) for k in STAGES if k in reported}
        stages["prompt_construction_ms"] = (built - start) * 1000.0
        total = max([(end - start) * 1000.0] + list(stages.values()))
        return InferenceResult(text, StageTimings(**stages, total_ms=total))


class SerializedBackend:
    """Guard for backends that cannot take concurrent requests."""

    def __init__(self, inner: InferenceBackend):
        self.inner = inner
        self._lock = threading.Lock()

    def generate(self, request: InferenceRequest) -> InferenceResult:
        with self._lock:
            return self.inner.generate(request)


# --- per-clip steps ---


@dataclass(frozen=True)
class ClassifierDecision:
    clip_id: str
    parsed: ParsedLabel
    raw: str
    timings: Optional[StageTimings]
    error: Optional[str] = None

    @property
    def routed(self) -> bool:
        return self.error is not None or self.parsed.label is not AnomalyClass.A


def classify_clip(backend: InferenceBackend, clip: VideoClip, prompts: PromptSet,
                  generation_params: Optional[Mapping] = None) -> ClassifierDecision:
    system, user = prompts.classification()
    request = InferenceRequest(clip.clip_id, system, user, clip.media_ref, dict(generation_params or {}))
    try:
        result = backend.generate(request)
    except TransportError as exc:
        log.warning("classifier failed on %s: %s", clip.clip_id, exc)
        return ClassifierDecision(clip.clip_id, ParsedLabel.invalid(""), "", None, f"{type(exc).__name__}: {exc}")
    return ClassifierDecision(clip.clip_id, parse_anomaly_label(result.text), result.text, result.timings)


def summarize_clip(backend: InferenceBackend, clip: VideoClip, prior: ParsedLabel, prompts: PromptSet,
                   use_prior_label: bool = True,
                   generation_params: Optional[Mapping] = None) -> InferenceResult:
    """Raises TransportError on backend failure; the orchestrator records it per clip."""
    if prior.label is AnomalyClass.A:
        raise TauError(f"clip {clip.clip_id} labeled normal should not be summarized")
    system, user = prompts.summarization(prior, use_prior_label)
    return backend.generate(InferenceRequest(clip.clip_id, system, user, clip.media_ref,
                                             dict(generation_params or {})))


# --- orchestration ---


@dataclass(frozen=True)
class PipelineConfig:
    workers: int = 4
    use_prior_label: bool = True
    serialize_backends: bool = False
    classifier_params: Mapping = field(default_factory=dict)
    summarizer_params: Mapping = field(default_factory=dict)


@dataclass
class ClipRecord:
    clip_id: str
    gt: Optional[AnomalyClass]
    duration_s: float
    decision: ClassifierDecision
    routed: bool
    summary: Optional[str] = None
    summarizer_timings: Optional[StageTimings] = None
    errors: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = self.decision
        return {
            "clip_id": self.clip_id,
            "gt": self.gt.value if self.gt else None,
            "duration_s": self.duration_s,
            "decision": {
                "label": str(d.parsed),
                "raw": d.raw,
                "timings": d.timings.to_dict() if d.timings else None,
            },
            "routed": self.routed,
            "summary": self.summary,
            "summarizer_timings": self.summarizer_timings.to_dict() if self.summarizer_timings else None,
            "errors": self.errors or None,
        }


@dataclass
class PipelineReport:
    records: list[ClipRecord]
    use_prior_label: bool = True

    @property
    def routed(self) -> list[ClipRecord]:
        return [r for r in self.records if r.routed]

    @property
    def error_records(self) -> list[ClipRecord]:
        return [r for r in self.records if r.errors]

    def predictions(self) -> list[ParsedLabel]:
        return [r.decision.parsed for r in self.records]

    def ground_truth(self) -> list[Optional[AnomalyClass]]:
        return [r.gt for r in self.records]

    def aggregates(self) -> dict:
        return {
            "clips": len(self.records),
            "routed": len(self.routed),
            "summarized": sum(1 for r in self.records if r.summary is not None),
            "errors": len(self.error_records),
            "classifier_errors": sum(1 for r in self.records if "classifier" in r.errors),
            "summarizer_errors": sum(1 for r in self.records if "summarizer" in r.errors),
        }

    def to_dict(self) -> dict:
        return {
            "use_prior_label": self.use_prior_label,
            "aggregates": self.aggregates(),
            "labels": {
                "gt": [g.value if g else None for g in self.ground_truth()],
                "pred": [str(p) for p in self.predictions()],
            },
            "records": [r.to_dict() for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)


def run_pipeline(classifier_backend: Optional[InferenceBackend], summarizer_backend: Optional[InferenceBackend],
                 clips: Sequence[VideoClip], config: PipelineConfig = PipelineConfig(),
                 prompts: Optional[PromptSet] = None) -> PipelineReport:
    """Classify every clip and summarize the routed ones; per-clip failures never abort the batch."""
    if classifier_backend is None or summarizer_backend is None:
        raise TauError("both a classifier and a summarizer backend are required")
    if not clips:
        raise TauError("no clips to process")
    prompts = prompts or PromptSet.load()
    if config.serialize_backends:
        classifier_backend = SerializedBackend(classifier_backend)
        summarizer_backend = SerializedBackend(summarizer_backend)

    def process(clip: VideoClip) -> ClipRecord:
        decision = classify_clip(classifier_backend, clip, prompts, config.classifier_params)
        record = ClipRecord(clip.clip_id, clip.label, clip.duration_s, decision, decision.routed)
        if decision.error:
            record.errors["classifier"] = decision.error
        if not record.routed:
            return record
        try:
            result = summarize_clip(summarizer_backend, clip, decision.parsed, prompts,
                                    config.use_prior_label, config.summarizer_params)
        except TransportError as exc:
            log.warning("summarizer failed on %s: %s", clip.clip_id, exc)
            record.errors["summarizer"] = f"{type(exc).__name__}: {exc}"
        else:
            record.summary = result.text
            record.summarizer_timings = result.timings
        return record

    with ThreadPoolExecutor(max_workers=max(1, config.workers)) as pool:
        records = list(pool.map(process, clips))
    return PipelineReport(records, config.use_prior_label)


def load_report(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)
