"""Prompt templates shipped as text assets under ``prompts/``.

Any asset can be overridden by pointing ``template_dir`` at a directory holding
files with the same names.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from string import Template
from typing import Optional

from .core import AnomalyClass, ParsedLabel, TauError

ASSETS = ("class_glosses.json", "classify.txt", "summarize.txt", "prior_sentence.txt",
          "judge_eval.txt", "judge_reward.txt")


def read_asset(name: str, template_dir: "str | Path | None" = None) -> str:
    if template_dir is not None:
        path = Path(template_dir) / name
        if path.exists():
            return path.read_text(encoding="utf-8")
    return resources.files("tau_toolkit").joinpath("prompts", name).read_text(encoding="utf-8")


def split_roles(text: str) -> tuple[str, str]:
    """Split a ``[system]`` / ``[user]`` template into its two message bodies."""
    m = re.match(r"\s*\[system\]\n(.*?)\n\[user\]\n(.*)\Z", text, re.S)
    if not m:
        raise TauError("prompt template must contain [system] and [user] sections")
    return m.group(1).strip("\n"), m.group(2).rstrip("\n")


@dataclass(frozen=True)
class PromptSet:
    glosses: dict[str, str]
    classify_system: str
    classify_user: str
    summarize_system: str
    summarize_user: str
    prior_sentence: str

    @classmethod
    def load(cls, template_dir: "str | Path | None" = None) -> "PromptSet":
        glosses = json.loads(read_asset("class_glosses.json", template_dir))
        missing = {"A", "B", "C", "D", "invalid"} - set(glosses)
        if missing:
            raise TauError(f"class gloss asset lacks keys {sorted(missing)}")
        cs, cu = split_roles(read_asset("classify.txt", template_dir))
        ss, su = split_roles(read_asset("summarize.txt", template_dir))
        prior = read_asset("prior_sentence.txt", template_dir).strip()
        return cls(glosses, cs, cu, ss, su, prior)

    @property
    def version(self) -> str:
        return str(self.glosses.get("version", "unversioned"))

    def gloss(self, prior: Optional[ParsedLabel]) -> str:
        if prior is None or prior.label is None:
            return self.glosses["invalid"]
        return self.glosses[prior.label.value]

    def classification(self) -> tuple[str, str]:
        user = Template(self.classify_user).substitute(
            {f"gloss_{c.value}": self.glosses[c.value] for c in AnomalyClass}
        )
        return self.classify_system, user

    def prior_text(self, prior: Optional[ParsedLabel]) -> str:
        return Template(self.prior_sentence).substitute(gloss=self.gloss(prior))

    def summarization(self, prior: Optional[ParsedLabel], use_prior_label: bool = True) -> tuple[str, str]:
        """System and user prompt; without the prior label, its line is dropped entirely."""
        lines = self.summarize_user.split("\n")
        out = []
        for line in lines:
            if line.strip() == "$prior_sentence":
                if use_prior_label:
                    out.append(self.prior_text(prior))
                continue
            out.append(line)
        return self.summarize_system, "\n".join(out)
