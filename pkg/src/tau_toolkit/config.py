"""INI-style application config. Unknown sections or keys are rejected.

Example::

    [judge]
    endpoint = https://api.example.com/v1
    model = gpt-5-mini-2025-08-07

The judge API key is never read from here; it comes from ``TAU_JUDGE_API_KEY``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .core import TauError


class ConfigError(TauError):
    pass


@dataclass(frozen=True)
class JudgeSettings:
    endpoint: str = ""
    model: str = "gpt-5-mini-2025-08-07"
    reasoning: str = "low"
    max_retries: int = 3
    concurrency: int = 4
    timeout_s: float = 120.0


@dataclass(frozen=True)
class BackendSettings:
    classifier_endpoint: str = ""
    classifier_model: str = "classifier"
    summarizer_endpoint: str = ""
    summarizer_model: str = "summarizer"
    api_key_env: str = "TAU_BACKEND_API_KEY"
    timeout_s: float = 300.0


@dataclass(frozen=True)
class PipelineSettings:
    workers: int = 4
    use_prior_label: bool = True
    serialize_backends: bool = False


@dataclass(frozen=True)
class GrpoSettings:
    epsilon: float = 0.2
    beta: float = 0.04
    group_size: int = 8
    advantage_epsilon: float = 1e-8
    seed: int = 0
    iterations: int = 300
    learning_rate: float = 0.5
    batch_size: int = 16


@dataclass(frozen=True)
class PromptSettings:
    template_dir: str = ""


@dataclass(frozen=True)
class OutputSettings:
    dir: str = "."


@dataclass(frozen=True)
class AppConfig:
    judge: JudgeSettings = field(default_factory=JudgeSettings)
    backends: BackendSettings = field(default_factory=BackendSettings)
    pipeline: PipelineSettings = field(default_factory=PipelineSettings)
    grpo: GrpoSettings = field(default_factory=GrpoSettings)
    prompts: PromptSettings = field(default_factory=PromptSettings)
    output: OutputSettings = field(default_factory=OutputSettings)

    @classmethod
    def load(cls, path: Optional[str] = None) -> "AppConfig":
        config = cls()
        if not path:
            return config
        parser = configparser.ConfigParser(interpolation=None)
        if not parser.read(path, encoding="utf-8"):
            raise ConfigError(f"cannot read config file {path}")
        sections = {f.name: f for f in fields(cls)}
        for name in parser.sections():
            if name not in sections:
                raise ConfigError(f"unknown config section [{name}]")
            current = getattr(config, name)
            allowed = {f.name: f for f in fields(current)}
            updates = {}
            for key, raw in parser.items(name):
                if key not in allowed:
                    raise ConfigError(f"unknown config key {name}.{key}")
                updates[key] = _convert(raw, type(getattr(current, key)), f"{name}.{key}")
            config = replace(config, **{name: replace(current, **updates)})
        return config


def _convert(raw: str, typ, key: str):
    try:
        if typ is bool:
            value = raw.strip().lower()
            if value in ("1", "true", "yes", "on"):
                return True
            if value in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def describe_defaults() -> str:
    """One ``section.key = default`` line per setting, for ``--help``."""
    lines = []
    for section in fields(AppConfig):
        for f in fields(section.default_factory()):
            lines.append(f"  {section.name}.{f.name} = {getattr(section.default_factory(), f.name)!r}")
    return "\n".join(lines)
