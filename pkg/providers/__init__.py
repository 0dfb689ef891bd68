"""
Provider Package
================

LLM gateway backends behind one chat-completion interface:
- Chat-completions HTTP backend (live)
- Scripted replay backend (tests and offline evaluation)

Usage:
    from providers import GatewayConfig, create_provider, LlmRequest, build_messages

    provider = create_provider(GatewayConfig(backend="scripted", script_path=Path("r1.script.json")))
    await provider.validate()
    text = await provider.complete(LlmRequest(messages=build_messages(system, user)))
"""

from typing import Dict, Optional, Type

import httpx

# Base classes and types
from .base import (
    BaseProvider,
    ChatMessage,
    ChatRole,
    LlmRequest,
    ProviderStats,
    HealthStatus,
    ProviderError,
    ProviderValidationError,
    ProviderQueryError,
    ProviderResponseError,
    ScriptExhaustedError,
    build_messages,
)

# Configuration
from .config import (
    ConfigValidationError,
    GatewayConfig,
    VALID_BACKENDS,
    parse_gateway_config,
    validate_gateway_config,
)

# Provider implementations
from .chat_completions_provider import ChatCompletionsProvider
from .scripted_provider import ScriptedProvider, script_from_dict, validate_script

PROVIDER_REGISTRY: Dict[str, Type[BaseProvider]] = {
    "live": ChatCompletionsProvider,
    "scripted": ScriptedProvider,
}


def create_provider(
    config: GatewayConfig,
    transport: Optional[httpx.AsyncBaseTransport] = None,
) -> BaseProvider:
    """
    Instantiate the backend selected by config.

    Raises:
        ConfigValidationError: config is inconsistent
        ProviderValidationError: script file cannot be loaded
    """
    errors = config.validate()
    if errors:
        raise ConfigValidationError(errors)

    if config.backend == "scripted":
        return ScriptedProvider.from_file(config.script_path)
    return ChatCompletionsProvider(config, transport=transport)


__all__ = [
    # Base classes
    "BaseProvider",
    "ChatMessage",
    "ChatRole",
    "LlmRequest",
    "ProviderStats",
    "HealthStatus",
    "build_messages",
    # Exceptions
    "ProviderError",
    "ProviderValidationError",
    "ProviderQueryError",
    "ProviderResponseError",
    "ScriptExhaustedError",
    "ConfigValidationError",
    # Configuration
    "GatewayConfig",
    "VALID_BACKENDS",
    "parse_gateway_config",
    "validate_gateway_config",
    # Providers
    "ChatCompletionsProvider",
    "ScriptedProvider",
    "script_from_dict",
    "validate_script",
    "PROVIDER_REGISTRY",
    "create_provider",
]
