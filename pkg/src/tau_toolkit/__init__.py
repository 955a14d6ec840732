"""Toolkit for two-layer traffic anomaly understanding: classify clips, summarize anomalies,
score summaries, and post-train with group-relative policy optimization."""

from .core import (
    AnomalyClass,
    DatasetManifest,
    DecomposedAnnotation,
    ParsedLabel,
    QACategory,
    TauError,
    VideoClip,
    build_training_plan,
    dataset_stats,
    load_manifest,
    parse_anomaly_label,
    stratified_split,
)
from .rewards import JudgeVerdict, classification_reward, g_score, summarization_reward

__version__ = "0.1.0"
