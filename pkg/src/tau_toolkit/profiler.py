"""Staged latency accounting and real-time factor for the two-layer pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

STAGES = (
    "prompt_construction_ms",
    "visual_input_processing_ms",
    "input_encoding_ms",
    "model_generation_ms",
    "output_decoding_ms",
)


@dataclass(frozen=True)
class StageTimings:
    """Per-clip timings in milliseconds; ``total_ms`` may include unattributed overhead."""

    prompt_construction_ms: float = 0.0
    visual_input_processing_ms: float = 0.0
    input_encoding_ms: float = 0.0
    model_generation_ms: float = 0.0
    output_decoding_ms: float = 0.0
    total_ms: float = 0.0

    def __post_init__(self):
        for name in STAGES + ("total_ms",):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite non-negative number, got {v}")
        if self.total_ms < max(getattr(self, s) for s in STAGES):
            raise ValueError("total_ms is smaller than one of its stages")

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in STAGES + ("total_ms",)}

    @classmethod
    def from_dict(cls, d) -> "StageTimings":
        return cls(**{k: float(d.get(k, 0.0)) for k in STAGES + ("total_ms",)})


@dataclass(frozen=True)
class RunProfile:
    clip_count: int
    total_runtime_s: float
    total_video_duration_s: float
    stage_totals_ms: dict = field(default_factory=dict)
    per_clip: tuple[StageTimings, ...] = ()

    @property
    def mean_latency_s(self) -> float:
        return self.total_runtime_s / self.clip_count if self.clip_count else 0.0

    @property
    def stage_means_ms(self) -> dict:
        return {k: (v / self.clip_count if self.clip_count else 0.0) for k, v in self.stage_totals_ms.items()}

    @property
    def rtf(self) -> float:
        return real_time_factor(self.total_runtime_s, self.total_video_duration_s)

    @classmethod
    def from_totals(cls, total_runtime_s: float, clip_count: int, total_video_duration_s: float) -> "RunProfile":
        """Profile known only by its totals (no per-clip timings)."""
        return cls(clip_count, total_runtime_s, total_video_duration_s)

    def to_dict(self) -> dict:
        return {
            "clip_count": self.clip_count,
            "total_runtime_s": self.total_runtime_s,
            "avg_latency_s": self.mean_latency_s,
            "total_video_duration_s": self.total_video_duration_s,
            "rtf": self.rtf if self.total_video_duration_s > 0 else None,
            "stage_totals_ms": self.stage_totals_ms,
            "stage_means_ms": self.stage_means_ms,
        }


def aggregate(profiles: Sequence[StageTimings], video_durations: Sequence[float]) -> RunProfile:
    if len(profiles) != len(video_durations):
        raise ValueError(f"{len(profiles)} timings but {len(video_durations)} durations")
    if not profiles:
        raise ValueError("cannot aggregate an empty run")
    totals = {k: math.fsum(getattr(p, k) for p in profiles) for k in STAGES + ("total_ms",)}
    return RunProfile(
        clip_count=len(profiles),
        total_runtime_s=totals["total_ms"] / 1000.0,
        total_video_duration_s=math.fsum(video_durations),
        stage_totals_ms=totals,
        per_clip=tuple(profiles),
    )


def real_time_factor(total_runtime_s: float, total_video_s: float) -> float:
    """Processing time per second of video; below 1 is faster than real time."""
    if not total_video_s > 0:
        raise ValueError(f"video duration must be positive, got {total_video_s}")
    return total_runtime_s / total_video_s


@dataclass(frozen=True)
class EfficiencyTable:
    columns: dict  # name -> {"total_runtime_s", "avg_latency_s", "rtf"}

    def to_dict(self) -> dict:
        return self.columns

    def render(self) -> str:
        rows = [
            ("Total runtime (sec)", "total_runtime_s"),
            ("Avg latency per clip (sec/clip)", "avg_latency_s"),
            ("Real-Time Factor (runtime/video_time)", "rtf"),
        ]
        names = list(self.columns)
        cells = [["Metric"] + names]
        for label, key in rows:
            cells.append([label] + [_fmt(self.columns[n][key]) for n in names])
        widths = [max(len(r[i]) for r in cells) for i in range(len(cells[0]))]
        lines = []
        for i, r in enumerate(cells):
            lines.append("  ".join(c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(r, widths))))
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def _fmt(v: Optional[float]) -> str:
    return "n/a" if v is None else f"{v:.2f}"


def efficiency_table(classifier: RunProfile, summarizer: RunProfile) -> EfficiencyTable:
    """Classifier, summarizer and end-to-end columns.

    End-to-end runtime is the sum of both layers; its per-clip latency and RTF
    use the classifier's clip count and video duration, since every clip
    passes the classifier.
    """

    def col(runtime, clips, video):
        return {
            "total_runtime_s": runtime,
            "clip_count": clips,
            "avg_latency_s": runtime / clips if clips else None,
            "video_duration_s": video,
            "rtf": real_time_factor(runtime, video) if video > 0 else None,
        }

    e2e_runtime = classifier.total_runtime_s + summarizer.total_runtime_s
    return EfficiencyTable({
        "Classifier": col(classifier.total_runtime_s, classifier.clip_count, classifier.total_video_duration_s),
        "Summarizer": col(summarizer.total_runtime_s, summarizer.clip_count, summarizer.total_video_duration_s),
        "End-to-End": col(e2e_runtime, classifier.clip_count, classifier.total_video_duration_s),
    })


def render_efficiency_table(classifier: RunProfile, summarizer: RunProfile) -> str:
    return efficiency_table(classifier, summarizer).render()
