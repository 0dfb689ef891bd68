"""
Provider Base Classes
=====================

Abstract base class and common types for all LLM backends.

Every backend answers one chat-completion request with one assistant
text. Backends must tolerate concurrent complete() calls.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from letter_config import DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_MODEL_ID


class HealthStatus(Enum):
    """Backend state as seen by its most recent call."""
    UNKNOWN = "unknown"  # before validate()
    HEALTHY = "healthy"
    DEGRADED = "degraded"  # retrying
    UNHEALTHY = "unhealthy"


class ChatRole(Enum):
    """Chat message roles understood by chat-completions backends."""
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatMessage:
    """One message in a chat-completions conversation."""
    role: ChatRole
    content: str

    def __post_init__(self):
        if self.role in (ChatRole.SYSTEM, ChatRole.USER) and not (self.content or "").strip():
            raise ProviderValidationError(
                "request", f"{self.role.value} message content must be non-empty"
            )

    def to_dict(self) -> Dict[str, str]:
        return {"role": self.role.value, "content": self.content}


@dataclass(frozen=True)
class LlmRequest:
    """
    A single chat-completion request.

    template_name, trial_index and candidate_index identify the request
    for the scripted backend and the run log; live backends ignore them.
    """
    messages: Tuple[ChatMessage, ...]
    temperature: float = 0.0
    model_id: str = DEFAULT_MODEL_ID
    max_output: int = DEFAULT_MAX_OUTPUT_TOKENS
    template_name: str = ""
    trial_index: int = 0
    candidate_index: Optional[int] = None

    def __post_init__(self):
        if not self.messages:
            raise ProviderValidationError("request", "messages must not be empty")
        if self.temperature < 0:
            raise ProviderValidationError("request", f"temperature must be >= 0, got {self.temperature}")
        if self.max_output < 1:
            raise ProviderValidationError("request", f"max_output must be >= 1, got {self.max_output}")

    @property
    def key(self) -> str:
        """Script key: '<template>/<trial>' or '<template>/<trial>/<candidate>'."""
        if self.candidate_index is None:
            return f"{self.template_name}/{self.trial_index}"
        return f"{self.template_name}/{self.trial_index}/{self.candidate_index}"

    def to_payload(self) -> Dict[str, Any]:
        """Chat-completions JSON body."""
        return {
            "model": self.model_id,
            "messages": [m.to_dict() for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_output,
        }


@dataclass
class ProviderStats:
    """
    Call outcomes of one backend instance.

    `health` moves to HEALTHY on success, DEGRADED while a request is being
    retried, and UNHEALTHY once a request finally fails.
    """
    health: HealthStatus = HealthStatus.UNKNOWN
    calls: int = 0
    completions: int = 0
    failures: int = 0
    retried_requests: int = 0
    total_tokens: int = 0
    last_duration_ms: float = 0.0
    last_error: Optional[str] = None
    last_completed_at: Optional[datetime] = None
    errors_by_message: Dict[str, int] = field(default_factory=dict)

    def _note_error(self, error: str) -> None:
        self.last_error = error
        self.errors_by_message[error] = self.errors_by_message.get(error, 0) + 1

    def on_ready(self) -> None:
        self.health = HealthStatus.HEALTHY

    def on_success(self, duration_ms: float, tokens: int = 0) -> None:
        self.calls += 1
        self.completions += 1
        self.total_tokens += tokens
        self.last_duration_ms = duration_ms
        self.last_completed_at = datetime.now()
        self.last_error = None
        self.health = HealthStatus.HEALTHY

    def on_retry(self, error: str) -> None:
        self.retried_requests += 1
        self._note_error(error)
        self.health = HealthStatus.DEGRADED

    def on_failure(self, error: str) -> None:
        self.calls += 1
        self.failures += 1
        self._note_error(error)
        self.health = HealthStatus.UNHEALTHY


class BaseProvider(ABC):
    """
    Abstract base class for LLM backends.

    Subclasses supply `name`, `validate` and `complete`, and report each
    outcome through `self.stats`.
    """

    def __init__(self):
        self._stats = ProviderStats()

    @property
    @abstractmethod
    def name(self) -> str:
        """Provider identifier, one of PROVIDER_REGISTRY's keys."""

    @property
    def health_status(self) -> HealthStatus:
        return self._stats.health

    @property
    def last_error(self) -> Optional[str]:
        return self._stats.last_error

    @property
    def stats(self) -> ProviderStats:
        return self._stats

    @abstractmethod
    async def validate(self) -> bool:
        """
        Check that the backend is usable (credentials, script loaded).

        Raises:
            ProviderValidationError: with the reason the backend cannot run
        """

    @abstractmethod
    async def complete(self, request: LlmRequest) -> str:
        """
        Return the assistant text for one request.

        Raises:
            ProviderQueryError: request could not be delivered after retries
            ProviderResponseError: non-success status or empty completion
            ScriptExhaustedError: scripted backend has no entry for the request
        """

    async def aclose(self) -> None:
        """Release network resources. No-op by default."""


# =============================================================================
# Provider Exceptions
# =============================================================================

class ProviderError(Exception):
    """Base exception for provider errors."""
    def __init__(self, provider: str, message: str, recoverable: bool = False):
        self.provider = provider
        self.message = message
        self.recoverable = recoverable
        super().__init__(f"[{provider}] {message}")


class ProviderValidationError(ProviderError):
    """Raised when provider validation or request construction fails."""
    pass


class ProviderQueryError(ProviderError):
    """Raised when a request cannot be delivered (transport failure after retries)."""
    pass


class ProviderResponseError(ProviderError):
    """Raised on non-success HTTP status or an unusable completion."""
    def __init__(self, provider: str, message: str, status_code: Optional[int] = None,
                 recoverable: bool = False):
        self.status_code = status_code
        super().__init__(provider, message, recoverable)


class ScriptExhaustedError(ProviderError):
    """Raised when the scripted backend has no entry for a request key."""
    def __init__(self, provider: str, key: str):
        self.key = key
        super().__init__(provider, f"script exhausted: no entry for '{key}'")


def build_messages(system_prompt: Optional[str], user_prompt: str) -> Tuple[ChatMessage, ...]:
    """System (optional) + user message tuple."""
    messages: List[ChatMessage] = []
    if system_prompt:
        messages.append(ChatMessage(ChatRole.SYSTEM, system_prompt))
    messages.append(ChatMessage(ChatRole.USER, user_prompt))
    return tuple(messages)
