"""Domain types for clips, labels, QA pairs, annotations, manifests and training plans."""

from __future__ import annotations

import json
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence


class TauError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class ManifestError(TauError, ValueError):
    pass


class AnomalyClass(str, Enum):
    A = "A"  # no anomaly
    B = "B"  # direction or manoeuvre violation
    C = "C"  # near-collision or collision
    D = "D"  # abnormal road use

    @property
    def is_abnormal(self) -> bool:
        return self is not AnomalyClass.A

    @classmethod
    def parse(cls, value: "str | AnomalyClass") -> "AnomalyClass":
        if isinstance(value, AnomalyClass):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise ManifestError(f"unknown anomaly class {value!r}") from None


ABNORMAL_CLASSES = (AnomalyClass.B, AnomalyClass.C, AnomalyClass.D)


def is_abnormal(label: AnomalyClass) -> bool:
    return label.is_abnormal


@dataclass(frozen=True)
class ParsedLabel:
    """A parsed classifier output: a class, or ``label=None`` for an invalid answer.

    ``raw`` always holds the unmodified model output.
    """

    label: Optional[AnomalyClass]
    raw: str = ""

    @classmethod
    def invalid(cls, raw: str) -> "ParsedLabel":
        return cls(None, raw)

    @classmethod
    def of(cls, label: "AnomalyClass | str") -> "ParsedLabel":
        label = AnomalyClass.parse(label)
        return cls(label, label.value)

    @property
    def is_valid(self) -> bool:
        return self.label is not None

    def __str__(self) -> str:
        return self.label.value if self.label is not None else "Invalid"


# A standalone letter: not glued to other word characters or hyphens.
_LETTER_TOKEN = re.compile(r"(?<![\w\-'])([A-Da-d])(?![\w\-'])")


def parse_anomaly_label(raw: str) -> ParsedLabel:
    """Extract the single class letter from a classifier response.

    The response must mention exactly one distinct standalone letter A-D
    (case-insensitive, punctuation and "Answer:" prefixes allowed). A lowercase
    "a" used as an English article ("a red car") is not a candidate.
    """
    if not isinstance(raw, str):
        return ParsedLabel.invalid("" if raw is None else str(raw))
    found = set()
    for m in _LETTER_TOKEN.finditer(raw):
        letter = m.group(1)
        if letter == "a" and re.match(r"\s+[A-Za-z]", raw[m.end():]):
            continue
        found.add(letter.upper())
    if len(found) != 1:
        return ParsedLabel.invalid(raw)
    return ParsedLabel(AnomalyClass(found.pop()), raw)


class QACategory(str, Enum):
    ENVIRONMENT = "environment"
    OBJECT_GROUNDING = "object_grounding"
    TIME_WINDOW = "time_window"
    REASONING = "reasoning"
    DESCRIPTION = "description"
    CLASSIFICATION = "classification"
    SUMMARIZATION = "summarization"

    @property
    def is_decomposed(self) -> bool:
        return self in DECOMPOSED_CATEGORIES


DECOMPOSED_CATEGORIES = (
    QACategory.ENVIRONMENT,
    QACategory.OBJECT_GROUNDING,
    QACategory.TIME_WINDOW,
    QACategory.REASONING,
    QACategory.DESCRIPTION,
)
FINAL_CATEGORIES = (QACategory.CLASSIFICATION, QACategory.SUMMARIZATION)


@dataclass(frozen=True)
class QAPair:
    clip_id: str
    category: QACategory
    question: str
    answer: str

    def __post_init__(self):
        if not self.question.strip() or not self.answer.strip():
            raise ManifestError(f"empty question or answer in QA pair for clip {self.clip_id}")


@dataclass(frozen=True)
class VideoClip:
    clip_id: str
    site_id: str
    duration_s: float
    label: AnomalyClass
    media_ref: str = ""

    def __post_init__(self):
        if not self.clip_id:
            raise ManifestError("clip_id must be non-empty")
        if not str(self.site_id).strip():
            raise ManifestError(f"clip {self.clip_id}: site_id must be non-empty")
        if not (self.duration_s > 0 and math.isfinite(self.duration_s)):
            raise ManifestError(f"clip {self.clip_id}: duration_s must be positive")


def _specified(value) -> bool:
    if value is None:
        return False
    if isinstance(value, str):
        return bool(value.strip())
    return len(value) > 0


@dataclass(frozen=True)
class EnvAnnotation:
    time_of_day: Optional[str] = None
    weather: Optional[str] = None
    surface: Optional[str] = None
    road: Optional[str] = None

    FIELDS = ("time_of_day", "weather", "surface", "road")

    def specified(self) -> dict[str, bool]:
        return {f: _specified(getattr(self, f)) for f in self.FIELDS}


@dataclass(frozen=True)
class IdentityAnnotation:
    vehicle_type: Optional[str] = None
    color: Optional[str] = None

    FIELDS = ("vehicle_type", "color")

    def specified(self) -> dict[str, bool]:
        return {f: _specified(getattr(self, f)) for f in self.FIELDS}


@dataclass(frozen=True)
class LocationAnnotation:
    frame_position: Optional[tuple[str, ...]] = None
    environment_position: Optional[tuple[str, ...]] = None

    FIELDS = ("frame_position", "environment_position")

    def __post_init__(self):
        for f in self.FIELDS:
            v = getattr(self, f)
            if isinstance(v, str):
                object.__setattr__(self, f, (v,))
            elif v is not None:
                object.__setattr__(self, f, tuple(v))

    def specified(self) -> dict[str, bool]:
        return {f: any(_specified(p) for p in (getattr(self, f) or ())) for f in self.FIELDS}


@dataclass(frozen=True)
class DecomposedAnnotation:
    env: EnvAnnotation = field(default_factory=EnvAnnotation)
    identity: IdentityAnnotation = field(default_factory=IdentityAnnotation)
    location: LocationAnnotation = field(default_factory=LocationAnnotation)
    description: str = ""
    reasoning: str = ""
    time_window: Optional[tuple[float, float]] = None
    summary: str = ""

    def validate_for(self, clip: VideoClip) -> None:
        if self.time_window is not None:
            start, end = self.time_window
            if not (0 <= start < end <= clip.duration_s):
                raise ManifestError(
                    f"clip {clip.clip_id}: time window {self.time_window} outside [0, {clip.duration_s}]"
                )
        if clip.label.is_abnormal and not self.summary.strip():
            raise ManifestError(f"clip {clip.clip_id}: abnormal clip needs a summary")

    def to_dict(self) -> dict:
        return {
            "env": {f: getattr(self.env, f) for f in EnvAnnotation.FIELDS},
            "identity": {f: getattr(self.identity, f) for f in IdentityAnnotation.FIELDS},
            "location": {
                f: (list(getattr(self.location, f)) if getattr(self.location, f) is not None else None)
                for f in LocationAnnotation.FIELDS
            },
            "description": self.description,
            "reasoning": self.reasoning,
            "time_window": list(self.time_window) if self.time_window is not None else None,
            "summary": self.summary,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DecomposedAnnotation":
        env = d.get("env") or {}
        ident = d.get("identity") or {}
        loc = d.get("location") or {}
        tw = d.get("time_window")
        return cls(
            env=EnvAnnotation(**{f: env.get(f) for f in EnvAnnotation.FIELDS}),
            identity=IdentityAnnotation(**{f: ident.get(f) for f in IdentityAnnotation.FIELDS}),
            location=LocationAnnotation(**{f: loc.get(f) for f in LocationAnnotation.FIELDS}),
            description=d.get("description") or "",
            reasoning=d.get("reasoning") or "",
            time_window=(float(tw[0]), float(tw[1])) if tw else None,
            summary=d.get("summary") or "",
        )


@dataclass(frozen=True)
class DatasetManifest:
    clips: tuple[VideoClip, ...] = ()
    annotations: Mapping[str, DecomposedAnnotation] = field(default_factory=dict)
    qa_pairs: tuple[QAPair, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "clips", tuple(self.clips))
        object.__setattr__(self, "qa_pairs", tuple(self.qa_pairs))
        by_id = {}
        for clip in self.clips:
            if clip.clip_id in by_id:
                raise ManifestError(f"duplicate clip_id {clip.clip_id}")
            by_id[clip.clip_id] = clip
        for cid, ann in self.annotations.items():
            if cid not in by_id:
                raise ManifestError(f"annotation for unknown clip {cid}")
            ann.validate_for(by_id[cid])
        for qa in self.qa_pairs:
            if qa.clip_id not in by_id:
                raise ManifestError(f"QA pair for unknown clip {qa.clip_id}")

    def clip(self, clip_id: str) -> VideoClip:
        for c in self.clips:
            if c.clip_id == clip_id:
                return c
        raise KeyError(clip_id)


# --- manifest file (JSON Lines, one record per clip) ---


def manifest_to_records(manifest: DatasetManifest) -> list[dict]:
    qa_by_clip: dict[str, list[QAPair]] = {}
    for qa in manifest.qa_pairs:
        qa_by_clip.setdefault(qa.clip_id, []).append(qa)
    records = []
    for clip in manifest.clips:
        ann = manifest.annotations.get(clip.clip_id)
        records.append({
            "clip_id": clip.clip_id,
            "site_id": clip.site_id,
            "duration_s": clip.duration_s,
            "label": clip.label.value,
            "media_ref": clip.media_ref,
            "annotation": ann.to_dict() if ann is not None else None,
            "qa": [
                {"category": qa.category.value, "question": qa.question, "answer": qa.answer}
                for qa in qa_by_clip.get(clip.clip_id, [])
            ],
        })
    return records


def manifest_from_records(records: Iterable[Mapping]) -> DatasetManifest:
    clips, annotations, qa_pairs = [], {}, []
    for i, rec in enumerate(records):
        try:
            clip = VideoClip(
                clip_id=str(rec["clip_id"]),
                site_id=str(rec["site_id"]),
                duration_s=float(rec["duration_s"]),
                label=AnomalyClass.parse(rec["label"]),
                media_ref=rec.get("media_ref") or "",
            )
        except KeyError as exc:
            raise ManifestError(f"record {i}: missing field {exc.args[0]!r}") from None
        clips.append(clip)
        if rec.get("annotation"):
            annotations[clip.clip_id] = DecomposedAnnotation.from_dict(rec["annotation"])
        for qa in rec.get("qa") or ():
            try:
                category = QACategory(qa["category"])
            except ValueError:
                raise ManifestError(f"clip {clip.clip_id}: unknown QA category {qa['category']!r}") from None
            qa_pairs.append(QAPair(clip.clip_id, category, qa["question"], qa["answer"]))
    return DatasetManifest(clips, annotations, qa_pairs)


def load_manifest(path: "str | Path") -> DatasetManifest:
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc.msg}") from None
    return manifest_from_records(records)


def save_manifest(manifest: DatasetManifest, path: "str | Path") -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in manifest_to_records(manifest):
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")


# --- split and statistics ---


def largest_remainder_allocation(counts: Mapping, total: int) -> dict:
    """Split ``total`` across keys in proportion to ``counts``.

    Floors first, then hands the leftover units to the largest fractional
    remainders; ties go to the larger class, then to key order.
    """
    n = sum(counts.values())
    if n == 0:
        return {k: 0 for k in counts}
    quotas = {k: total * c / n for k, c in counts.items()}
    alloc = {k: math.floor(q) for k, q in quotas.items()}
    leftover = total - sum(alloc.values())
    order = sorted(counts, key=lambda k: (-(quotas[k] - alloc[k]), -counts[k], str(k)))
    for k in order[:leftover]:
        alloc[k] += 1
    return alloc


def stratified_split(manifest: DatasetManifest, test_count: int, seed: int = 0) -> tuple[list[str], list[str]]:
    """Class-stratified train/test split of clip ids.

    Returns ``(train_ids, test_ids)``, each in manifest order.
    """
    n = len(manifest.clips)
    if not 0 <= test_count <= n:
        raise ManifestError(f"test_count must be in [0, {n}], got {test_count}")
    by_class: dict[AnomalyClass, list[str]] = {c: [] for c in AnomalyClass}
    for clip in manifest.clips:
        by_class[clip.label].append(clip.clip_id)
    alloc = largest_remainder_allocation({c: len(ids) for c, ids in by_class.items()}, test_count)
    rng = random.Random(seed)
    test = set()
    for cls in AnomalyClass:
        test.update(rng.sample(sorted(by_class[cls]), alloc[cls]))
    train_ids = [c.clip_id for c in manifest.clips if c.clip_id not in test]
    test_ids = [c.clip_id for c in manifest.clips if c.clip_id in test]
    return train_ids, test_ids


DEFAULT_DURATION_BINS = (0.0, 10.0, 20.0, 30.0, 60.0, 120.0, math.inf)


@dataclass(frozen=True)
class StatsReport:
    total_clips: int
    total_duration_s: float
    total_qa: int
    class_counts: dict[str, int]
    site_counts: dict[str, int]
    duration_histogram: list[tuple[float, float, int]]
    qa_category_counts: dict[str, int]
    qa_category_proportions: dict[str, float]

    @property
    def num_sites(self) -> int:
        return len(self.site_counts)

    @property
    def abnormal_clips(self) -> int:
        return sum(v for k, v in self.class_counts.items() if k != "A")

    def to_dict(self) -> dict:
        return {
            "total_clips": self.total_clips,
            "num_sites": self.num_sites,
            "total_duration_s": self.total_duration_s,
            "total_qa": self.total_qa,
            "class_counts": self.class_counts,
            "abnormal_clips": self.abnormal_clips,
            "site_counts": self.site_counts,
            "duration_histogram": [
                {"lo": lo, "hi": (None if math.isinf(hi) else hi), "count": c}
                for lo, hi, c in self.duration_histogram
            ],
            "qa_category_counts": self.qa_category_counts,
            "qa_category_proportions": self.qa_category_proportions,
        }


def dataset_stats(manifest: DatasetManifest, duration_bins: Sequence[float] = DEFAULT_DURATION_BINS) -> StatsReport:
    class_counts = {c.value: 0 for c in AnomalyClass}
    class_counts.update(Counter(c.label.value for c in manifest.clips))
    site_counts = dict(sorted(Counter(c.site_id for c in manifest.clips).items()))
    hist = []
    for lo, hi in zip(duration_bins[:-1], duration_bins[1:]):
        hist.append((lo, hi, sum(1 for c in manifest.clips if lo <= c.duration_s < hi)))
    qa_counts = {c.value: 0 for c in QACategory}
    qa_counts.update(Counter(qa.category.value for qa in manifest.qa_pairs))
    total_qa = len(manifest.qa_pairs)
    props = {k: (v / total_qa if total_qa else 0.0) for k, v in qa_counts.items()}
    return StatsReport(
        total_clips=len(manifest.clips),
        total_duration_s=math.fsum(c.duration_s for c in manifest.clips),
        total_qa=total_qa,
        class_counts=class_counts,
        site_counts=site_counts,
        duration_histogram=hist,
        qa_category_counts=qa_counts,
        qa_category_proportions=props,
    )


# --- training plans ---


@dataclass(frozen=True)
class TrainingStage:
    name: str
    qa_categories: tuple[QACategory, ...]
    epochs: int
    learning_rate: float
    method: str  # "SFT" or "GRPO"

    def __post_init__(self):
        if self.method not in ("SFT", "GRPO"):
            raise TauError(f"unknown training method {self.method!r}")
        if not (isinstance(self.epochs, int) and self.epochs > 0):
            raise TauError(f"stage {self.name}: epochs must be a positive integer")
        if not self.learning_rate > 0:
            raise TauError(f"stage {self.name}: learning rate must be positive")


@dataclass(frozen=True)
class TrainingPlan:
    role: str
    stages: tuple[TrainingStage, ...]

    def __post_init__(self):
        methods = [s.method for s in self.stages]
        if methods.count("GRPO") != 1 or methods[-1] != "GRPO":
            raise TauError("a plan needs exactly one GRPO stage, placed last")
        if self.stages[-1].epochs != 1:
            raise TauError("the GRPO stage runs for exactly one epoch")

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "stages": [
                {
                    "name": s.name,
                    "method": s.method,
                    "qa_categories": [c.value for c in s.qa_categories],
                    "epochs": s.epochs,
                    "learning_rate": s.learning_rate,
                }
                for s in self.stages
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


ROLES = ("classifier", "summarizer")
SFT_LR = {"classifier": 5e-6, "summarizer": 3e-6}
GRPO_LR = 1e-6


def build_training_plan(role: str, overrides: Optional[Mapping[str, Mapping]] = None) -> TrainingPlan:
    """Stage list for an external trainer. ``overrides`` maps stage name to field replacements."""
    if role == "classifier":
        stages = [
            TrainingStage("decomposed_sft",
                          (QACategory.TIME_WINDOW, QACategory.DESCRIPTION, QACategory.REASONING),
                          3, SFT_LR[role], "SFT"),
            TrainingStage("task_sft", (QACategory.CLASSIFICATION,), 6, SFT_LR[role], "SFT"),
            TrainingStage("tau_grpo", (QACategory.CLASSIFICATION,), 1, GRPO_LR, "GRPO"),
        ]
    elif role == "summarizer":
        stages = [
            TrainingStage("decomposed_sft", DECOMPOSED_CATEGORIES, 3, SFT_LR[role], "SFT"),
            TrainingStage("task_sft", (QACategory.SUMMARIZATION,), 4, SFT_LR[role], "SFT"),
            TrainingStage("tau_grpo", (QACategory.SUMMARIZATION,), 1, GRPO_LR, "GRPO"),
        ]
    else:
        raise TauError(f"unknown role {role!r}; expected one of {ROLES}")
    if overrides:
        names = {s.name for s in stages}
        unknown = set(overrides) - names
        if unknown:
            raise TauError(f"overrides for unknown stages: {sorted(unknown)}")
        stages = [
            TrainingStage(**{**s.__dict__, **overrides.get(s.name, {})}) for s in stages
        ]
    return TrainingPlan(role, tuple(stages))
