"""Human-readable elimination traces and self-contained prompt bundles."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Mapping

from .annotators import MicroAnnotation
from .errors import CatalogError
from .stager import ExplanationLog, LogEntry, Provenance, Stage, StagedEpoch, rule_catalog

__all__ = [
    "StaticExplanation",
    "PromptBundle",
    "BUNDLE_SCHEMA_VERSION",
    "render_entry",
    "render_static",
    "parse_outcomes",
    "build_prompt_bundle",
]

BUNDLE_SCHEMA_VERSION = "1.0"


@dataclass(frozen=True)
class StaticExplanation:
    epoch_index: int
    stage: Stage
    lines: tuple[str, ...]

    def text(self) -> str:
        header = f"Epoch {self.epoch_index}: {self.stage.value}"
        return "\n".join((header, *self.lines))


def render_entry(entry: LogEntry) -> str:
    s = entry.stage.value
    kind = entry.rule_id.split(".")[0]
    if entry.rule_id == "inherit":
        return f"The epoch is {s}, inherited from previous epoch ({s}) because {entry.detail}"
    if entry.rule_id == "default_first":
        return f"The epoch is {s} by default because {entry.detail}"
    if kind == "transition":
        if entry.met:
            return f"The epoch is {s} by continuity. {entry.detail}"
        return f"Not {s} by continuity because {entry.detail}"
    if entry.met:
        return f"The epoch is definite {s}. {entry.detail}"
    return f"Not definite {s} because {entry.detail}"


def render_static(staged: StagedEpoch) -> StaticExplanation:
    """One line per log entry, in evaluation order."""
    entries = staged.explanation.entries
    if not entries:
        raise ValueError(f"epoch {staged.epoch_index} has an empty explanation")
    return StaticExplanation(staged.epoch_index, staged.stage, tuple(render_entry(e) for e in entries))


_LINE_PATTERNS = (
    (re.compile(r"^Not definite (W|N1|N2|N3|R) because "), False),
    (re.compile(r"^The epoch is definite (W|N1|N2|N3|R)\. "), True),
    (re.compile(r"^Not (W|N1|N2|N3|R) by continuity because "), False),
    (re.compile(r"^The epoch is (W|N1|N2|N3|R) by continuity\. "), True),
    (re.compile(r"^The epoch is (W|N1|N2|N3|R), inherited from previous epoch "), True),
    (re.compile(r"^The epoch is (W|N1|N2|N3|R) by default because "), True),
)


def parse_outcomes(explanation: StaticExplanation) -> list[tuple[Stage, bool]]:
    """Recover ``(stage, met)`` pairs from rendered lines."""
    out = []
    for line in explanation.lines:
        for pattern, met in _LINE_PATTERNS:
            m = pattern.match(line)
            if m:
                out.append((Stage(m.group(1)), met))
                break
        else:
            raise ValueError(f"unrecognised explanation line: {line!r}")
    return out


@dataclass(frozen=True)
class PromptBundle:
    epoch_index: int
    stage: str
    provenance: str
    explanation_log: dict
    rendered: tuple[str, ...]
    rule_descriptions: dict[str, str]
    annotation_snippets: tuple[dict, ...] = field(default_factory=tuple)
    schema_version: str = BUNDLE_SCHEMA_VERSION

    def to_json(self) -> str:
        doc = {
            "schema_version": self.schema_version,
            "epoch_index": self.epoch_index,
            "stage": self.stage,
            "provenance": self.provenance,
            "explanation_log": self.explanation_log,
            "rendered": list(self.rendered),
            "rule_descriptions": self.rule_descriptions,
            "annotation_snippets": list(self.annotation_snippets),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PromptBundle":
        doc = json.loads(text)
        return cls(
            epoch_index=doc["epoch_index"],
            stage=doc["stage"],
            provenance=doc["provenance"],
            explanation_log=doc["explanation_log"],
            rendered=tuple(doc["rendered"]),
            rule_descriptions=doc["rule_descriptions"],
            annotation_snippets=tuple(doc["annotation_snippets"]),
            schema_version=doc["schema_version"],
        )


def _snippet(a: MicroAnnotation) -> dict:
    return {"id": a.id, **a.to_json()}


def build_prompt_bundle(staged: StagedEpoch, catalog: Mapping[str, str] | None = None) -> PromptBundle:
    """Everything an external chat client needs to discuss one epoch.

    The bundle carries the full rule catalog, not only the rules evaluated,
    so questions about stages skipped by short-circuiting stay answerable.
    """
    catalog = dict(rule_catalog() if catalog is None else catalog)
    if not catalog:
        raise CatalogError("rule catalog is empty")
    missing = sorted(set(staged.explanation.rule_ids) - set(catalog))
    if missing:
        raise CatalogError(f"rule catalog lacks {', '.join(missing)}")
    return PromptBundle(
        epoch_index=staged.epoch_index,
        stage=staged.stage.value,
        provenance=staged.provenance.value,
        explanation_log=staged.explanation.to_json(),
        rendered=render_static(staged).lines,
        rule_descriptions=catalog,
        annotation_snippets=tuple(_snippet(a) for a in staged.explanation.referenced),
    )


def staged_from_json(doc: Mapping) -> StagedEpoch:
    """Rebuild a StagedEpoch from its ``to_json`` form (annotation refs by id only)."""
    entries = [LogEntry(Stage(e["stage"]), bool(e["met"]), e["detail"], e["rule_id"]) for e in doc["entries"]]
    return StagedEpoch(doc["epoch_index"], Stage(doc["stage"]), Provenance(doc["provenance"]),
                       ExplanationLog(entries, []))
