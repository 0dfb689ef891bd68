"""
Provider Configuration
======================

Backend selection and settings for the LLM gateway, with validation
of the "gateway" section of a run config file.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

from letter_config import (
    DEFAULT_GENERATION_TEMPERATURE,
    DEFAULT_LLM_AUTH_ENV,
    DEFAULT_LLM_ENDPOINT,
    DEFAULT_LLM_MAX_RETRIES,
    DEFAULT_LLM_TIMEOUT_SECONDS,
    DEFAULT_MAX_OUTPUT_TOKENS,
    DEFAULT_MODEL_ID,
)

# Valid backend names
VALID_BACKENDS = {"live", "scripted"}


class ConfigValidationError(Exception):
    """Raised when configuration validation fails."""
    def __init__(self, errors: List[str]):
        self.errors = errors
        message = "Configuration validation failed:\n" + "\n".join(f"  - {e}" for e in errors)
        super().__init__(message)


@dataclass
class GatewayConfig:
    """
    LLM backend selection.

    Exactly one backend is active: "live" talks to a chat-completions
    endpoint; "scripted" replays a JSON script file.
    """
    backend: str = "live"
    script_path: Optional[Path] = None
    model_id: str = DEFAULT_MODEL_ID
    endpoint: str = DEFAULT_LLM_ENDPOINT
    auth_env_var: str = DEFAULT_LLM_AUTH_ENV
    timeout_seconds: float = DEFAULT_LLM_TIMEOUT_SECONDS
    max_retries: int = DEFAULT_LLM_MAX_RETRIES
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    generation_temperature: float = DEFAULT_GENERATION_TEMPERATURE

    def validate(self, require_script: bool = True) -> List[str]:
        """
        Semantic checks on the parsed config.

        require_script=False allows a scripted backend without a script
        path (corpus evaluation supplies one script per report).
        """
        errors = []
        if self.backend not in VALID_BACKENDS:
            errors.append(f"gateway.backend: must be one of {sorted(VALID_BACKENDS)}, got '{self.backend}'")
        if self.backend == "scripted" and self.script_path is None and require_script:
            errors.append("gateway.script_path: required when backend is 'scripted'")
        if self.timeout_seconds <= 0:
            errors.append("gateway.timeout_seconds: must be > 0")
        if self.max_retries < 0:
            errors.append("gateway.max_retries: must be a non-negative integer")
        if self.max_output_tokens < 1:
            errors.append("gateway.max_output_tokens: must be a positive integer")
        if self.generation_temperature < 0:
            errors.append("gateway.generation_temperature: must be >= 0")
        return errors

    def to_dict(self) -> Dict[str, Any]:
        return {
            "backend": self.backend,
            "script_path": str(self.script_path) if self.script_path else None,
            "model_id": self.model_id,
            "endpoint": self.endpoint,
            "auth_env_var": self.auth_env_var,
            "timeout_seconds": self.timeout_seconds,
            "max_retries": self.max_retries,
            "max_output_tokens": self.max_output_tokens,
            "generation_temperature": self.generation_temperature,
        }


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def validate_gateway_config(data: Any) -> List[str]:
    """
    Validate the raw "gateway" section of a config file.

    Returns:
        List of validation error messages (empty if valid)
    """
    errors = []

    if not isinstance(data, dict):
        errors.append("'gateway' must be an object")
        return errors

    if "backend" in data and data["backend"] not in VALID_BACKENDS:
        errors.append(f"gateway.backend: invalid value '{data['backend']}'. Must be one of: {', '.join(sorted(VALID_BACKENDS))}")

    for key in ("model_id", "endpoint", "auth_env_var", "script_path"):
        if key in data and data[key] is not None and not isinstance(data[key], str):
            errors.append(f"gateway.{key}: must be a string")

    if "timeout_seconds" in data:
        if not _is_number(data["timeout_seconds"]) or data["timeout_seconds"] <= 0:
            errors.append("gateway.timeout_seconds: must be a positive number")
    if "max_retries" in data:
        if not isinstance(data["max_retries"], int) or isinstance(data["max_retries"], bool) or data["max_retries"] < 0:
            errors.append("gateway.max_retries: must be a non-negative integer")
    if "max_output_tokens" in data:
        if not isinstance(data["max_output_tokens"], int) or isinstance(data["max_output_tokens"], bool) or data["max_output_tokens"] < 1:
            errors.append("gateway.max_output_tokens: must be a positive integer")
    if "generation_temperature" in data:
        if not _is_number(data["generation_temperature"]) or data["generation_temperature"] < 0:
            errors.append("gateway.generation_temperature: must be a non-negative number")

    return errors


def parse_gateway_config(data: Dict[str, Any], base_dir: Optional[Path] = None) -> GatewayConfig:
    """Parse a validated "gateway" section; relative script paths resolve against base_dir."""
    script_path = data.get("script_path")
    if script_path is not None:
        script_path = Path(script_path)
        if base_dir is not None and not script_path.is_absolute():
            script_path = base_dir / script_path

    return GatewayConfig(
        backend=data.get("backend", "live"),
        script_path=script_path,
        model_id=data.get("model_id", DEFAULT_MODEL_ID),
        endpoint=data.get("endpoint", DEFAULT_LLM_ENDPOINT),
        auth_env_var=data.get("auth_env_var", DEFAULT_LLM_AUTH_ENV),
        timeout_seconds=float(data.get("timeout_seconds", DEFAULT_LLM_TIMEOUT_SECONDS)),
        max_retries=data.get("max_retries", DEFAULT_LLM_MAX_RETRIES),
        max_output_tokens=data.get("max_output_tokens", DEFAULT_MAX_OUTPUT_TOKENS),
        generation_temperature=float(data.get("generation_temperature", DEFAULT_GENERATION_TEMPERATURE)),
    )
