"""Prompt templates and the versioned prompt catalog."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

import yaml

from lifejournal.errors import UnboundPlaceholder

RESPONSE_SECTIONS = ("reasoning", "summary")

_TOKEN = re.compile(r"\{\{|\}\}|\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    role: str
    body: str
    expects_image: bool = False
    response_schema: tuple[str, str] = RESPONSE_SECTIONS

    def __post_init__(self) -> None:
        lowered = self.body.lower()
        first = lowered.find(self.response_schema[0])
        last = lowered.rfind(self.response_schema[1])
        if first < 0 or last < 0 or first > last:
            raise ValueError(
                f"template {self.id!r} must request the {self.response_schema[0]!r} "
                f"then {self.response_schema[1]!r} sections"
            )

    @property
    def placeholders(self) -> list[str]:
        return [m.group(1) for m in _TOKEN.finditer(self.body) if m.group(1)]


def render_prompt(template: PromptTemplate | str, bindings: Mapping[str, object]) -> str:
    """Substitute ``{name}`` placeholders in one pass.

    ``{{`` and ``}}`` produce literal braces. Bound values are inserted verbatim
    and never re-expanded, so a value containing ``{name}`` stays as text.
    """
    body = template.body if isinstance(template, PromptTemplate) else template
    missing = sorted({name for name in (m.group(1) for m in _TOKEN.finditer(body)) if name and name not in bindings})
    if missing:
        raise UnboundPlaceholder(missing)

    def sub(m: re.Match) -> str:
        tok = m.group(0)
        if tok == "{{":
            return "{"
        if tok == "}}":
            return "}"
        return str(bindings[m.group(1)])

    return _TOKEN.sub(sub, body)


@dataclass
class PromptCatalog:
    version: str
    templates: dict[str, PromptTemplate]
    journal_examples: list[str] = field(default_factory=list)
    concise_instructions: dict[str, dict[str, str]] = field(default_factory=dict)

    def concise_instruction(self, template_id: str, enabled: bool = True) -> str:
        options = self.concise_instructions.get(template_id, {})
        return options.get("on" if enabled else "off", "")

    def __getitem__(self, template_id: str) -> PromptTemplate:
        try:
            return self.templates[template_id]
        except KeyError:
            raise KeyError(f"no prompt template {template_id!r} in catalog {self.version}") from None

    @classmethod
    def from_mapping(cls, data: Mapping) -> PromptCatalog:
        footer = data.get("response_format", "")
        templates = {}
        for tid, spec in data["templates"].items():
            body = spec["body"].rstrip("\n") + ("\n\n" + footer.rstrip("\n") if footer else "")
            templates[tid] = PromptTemplate(
                id=tid,
                role=spec["role"],
                body=body,
                expects_image=bool(spec.get("expects_image", False)),
            )
        return cls(
            version=str(data.get("version", "unversioned")),
            templates=templates,
            journal_examples=list(data.get("journal_examples", [])),
            concise_instructions={
                k: {str(mode): str(text) for mode, text in v.items()}
                for k, v in (data.get("concise_instruction") or {}).items()
            },
        )

    @classmethod
    def load(cls, path: str | Path | None = None) -> PromptCatalog:
        """Load a catalog file; the bundled one when ``path`` is None."""
        if path is None:
            text = resources.files("lifejournal").joinpath("prompts/catalog.yaml").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls.from_mapping(yaml.safe_load(text))

    def roles(self) -> set[str]:
        return {t.role for t in self.templates.values()}
