"""Prompt templates: three-part structure and deterministic rendering.

Every prompt is task description + context + format requirements, in that
order. Template text lives in a key-value file (templates.cfg) so wording
can be edited without touching code.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from string import Template

from .errors import MissingSlot

_PLACEHOLDER = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}|\$([A-Za-z_][A-Za-z0-9_]*)")


class TemplateName(str, Enum):
    ADD = "add"
    MERGE = "merge"
    RETRIEVE = "retrieve"
    REFLECT = "reflect"
    RECOMMEND = "recommend"


def _placeholders(text: str) -> set[str]:
    return {a or b for a, b in _PLACEHOLDER.findall(text)}


@dataclass(frozen=True)
class PromptTemplate:
    name: TemplateName
    task_description: str
    context_body: str
    format_requirements: str
    slots: tuple[str, ...]

    def __post_init__(self):
        for part_name, part in (
            ("task_description", self.task_description),
            ("context", self.context_body),
            ("format_requirements", self.format_requirements),
        ):
            if not part.strip():
                raise ValueError(f"template {self.name.value!r}: empty {part_name}")
        referenced = (
            _placeholders(self.task_description)
            | _placeholders(self.context_body)
            | _placeholders(self.format_requirements)
        )
        undeclared = referenced - set(self.slots)
        if undeclared:
            raise ValueError(
                f"template {self.name.value!r} references undeclared slots: {sorted(undeclared)}"
            )


def render(template: PromptTemplate, context: dict[str, str]) -> str:
    """Substitute slot bindings; all declared slots must be bound."""
    for slot in template.slots:
        if slot not in context:
            raise MissingSlot(slot, template.name.value)
    bindings = {k: str(v) for k, v in context.items()}
    parts = (
        Template(template.task_description).substitute(bindings),
        Template(template.context_body).substitute(bindings),
        Template(template.format_requirements).substitute(bindings),
    )
    return "\n\n".join(parts)


def load_templates(path: str | Path | None = None) -> dict[TemplateName, PromptTemplate]:
    """Load all templates from a config file (the packaged default if None)."""
    parser = configparser.ConfigParser(interpolation=None)
    if path is None:
        text = resources.files("memrec").joinpath("templates.cfg").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    parser.read_string(text)

    templates: dict[TemplateName, PromptTemplate] = {}
    for name in TemplateName:
        if not parser.has_section(name.value):
            raise ValueError(f"template file missing section [{name.value}]")
        section = parser[name.value]
        slots = tuple(s.strip() for s in section.get("slots", "").split(",") if s.strip())
        templates[name] = PromptTemplate(
            name=name,
            task_description=section["task_description"].strip(),
            context_body=section["context"].strip(),
            format_requirements=section["format_requirements"].strip(),
            slots=slots,
        )
    return templates
