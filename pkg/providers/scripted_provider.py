"""
Scripted Provider
=================

Deterministic backend that replays completions from a JSON script.

Script format: a JSON object mapping request keys to completion text.
Keys are "<template>/<trial>" or, for generation requests,
"<template>/<trial>/<candidate>". A candidate request falls back to its
"<template>/<trial>" entry so one completion can serve all candidates.
"""

import asyncio
import json
import logging
from pathlib import Path
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Union

from .base import (
    BaseProvider,
    LlmRequest,
    ProviderResponseError,
    ProviderValidationError,
    ScriptExhaustedError,
)

logger = logging.getLogger(__name__)


class ScriptedProvider(BaseProvider):
    """
    Replay backend for tests and offline evaluation.

    Every complete() call is recorded in `calls` (request keys, in call
    order) so callers can count extraction and generation requests.
    """

    def __init__(self, script: Mapping[str, str], source: Optional[Path] = None):
        super().__init__()
        self._script: Mapping[str, str] = MappingProxyType(dict(script))
        self.source = source
        self._lock = asyncio.Lock()
        self.calls: List[str] = []

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ScriptedProvider":
        """
        Load a script file.

        Raises:
            ProviderValidationError: missing file, invalid JSON, or a
                non-string key/value
        """
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ProviderValidationError("scripted", f"Script file not found: {path}")
        except json.JSONDecodeError as e:
            raise ProviderValidationError("scripted", f"Invalid JSON in {path}: {e}")

        errors = validate_script(data)
        if errors:
            raise ProviderValidationError("scripted", f"Invalid script {path}: " + "; ".join(errors))
        return cls(data, source=path)

    @property
    def name(self) -> str:
        return "scripted"

    @property
    def script(self) -> Mapping[str, str]:
        return self._script

    async def validate(self) -> bool:
        if not self._script:
            raise ProviderValidationError(self.name, "Script is empty")
        self.stats.on_ready()
        return True

    def resolve_key(self, request: LlmRequest) -> Optional[str]:
        """Script key serving this request, or None."""
        if request.key in self._script:
            return request.key
        if request.candidate_index is not None:
            trial_key = f"{request.template_name}/{request.trial_index}"
            if trial_key in self._script:
                return trial_key
        return None

    async def complete(self, request: LlmRequest) -> str:
        """
        Return the scripted completion for the request key.

        Raises:
            ScriptExhaustedError: no entry for the key
            ProviderResponseError: the entry is empty
        """
        async with self._lock:
            self.calls.append(request.key)
            key = self.resolve_key(request)

        if key is None:
            self.stats.on_failure(f"script exhausted: {request.key}")
            raise ScriptExhaustedError(self.name, request.key)

        text = self._script[key]
        if not text.strip():
            self.stats.on_failure(f"empty completion: {key}")
            raise ProviderResponseError(self.name, f"empty completion for '{key}'")

        logger.debug(f"Scripted completion {request.key} -> {key}")
        self.stats.on_success(0.0)
        return text

    def call_count(self, template_name: Optional[str] = None) -> int:
        """Number of recorded calls, optionally for one template."""
        if template_name is None:
            return len(self.calls)
        return sum(1 for key in self.calls if key.split("/", 1)[0] == template_name)


def validate_script(data: object) -> List[str]:
    """
    Validate a parsed script document.

    Returns:
        List of validation error messages (empty if valid)
    """
    errors = []
    if not isinstance(data, dict):
        return ["Script must be a JSON object"]

    for key, value in data.items():
        parts = key.split("/")
        if len(parts) not in (2, 3) or not parts[0] or not all(p.isdigit() for p in parts[1:]):
            errors.append(f"invalid key '{key}' (expected '<template>/<trial>[/<candidate>]')")
        if not isinstance(value, str):
            errors.append(f"'{key}': value must be a string")
    return errors


def script_from_dict(entries: Dict[str, str]) -> ScriptedProvider:
    """Build a scripted provider from an in-memory mapping after validation."""
    errors = validate_script(entries)
    if errors:
        raise ProviderValidationError("scripted", "; ".join(errors))
    return ScriptedProvider(entries)
