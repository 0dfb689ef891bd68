"""
Prompt Loading Utilities
========================

Loads the versioned prompt templates shipped in the prompts directory
and renders them with strict placeholder checking.

Placeholders look like {name} (lowercase identifier). Rendering is a
single pass: text inside a binding is inserted verbatim and never
expanded again.
"""

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import FrozenSet, Mapping
import re


PROMPTS_DIR = Path(__file__).parent / "prompts"

PLACEHOLDER_PATTERN = re.compile(r"\{([a-z_][a-z0-9_]*)\}")


class TemplateError(Exception):
    """Raised for missing templates and binding mismatches."""

    def __init__(self, message: str, template: str = ""):
        self.message = message
        self.template = template
        super().__init__(f"[{template}] {message}" if template else message)


@dataclass(frozen=True)
class PromptTemplate:
    """Named template body with {placeholder} slots."""
    name: str
    body: str

    @property
    def placeholders(self) -> FrozenSet[str]:
        return frozenset(PLACEHOLDER_PATTERN.findall(self.body))


def render(template: PromptTemplate, bindings: Mapping[str, str], strict: bool = True) -> str:
    """
    Substitute every placeholder with its binding.

    Raises:
        TemplateError: a placeholder is unbound, or (strict) a binding
            names no placeholder
    """
    names = template.placeholders
    unbound = sorted(names - set(bindings))
    if unbound:
        raise TemplateError(f"Unbound placeholder(s): {', '.join(unbound)}", template.name)

    if strict:
        unknown = sorted(set(bindings) - names)
        if unknown:
            raise TemplateError(f"Unknown binding(s): {', '.join(unknown)}", template.name)

    return PLACEHOLDER_PATTERN.sub(lambda m: str(bindings[m.group(1)]), template.body)


def load_prompt(name: str) -> str:
    """Load a prompt template body from the prompts directory."""
    prompt_path = PROMPTS_DIR / f"{name}.md"
    try:
        return prompt_path.read_text(encoding='utf-8')
    except FileNotFoundError:
        raise TemplateError(f"Template file not found: {prompt_path}", name)


@lru_cache(maxsize=None)
def load_template(name: str) -> PromptTemplate:
    """Load and cache a PromptTemplate by name."""
    return PromptTemplate(name=name, body=load_prompt(name).strip())
