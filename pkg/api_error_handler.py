"""
API Error Handler
=================

Maps failed calls to the chat-completions endpoint and the FHIR server onto
a small set of recovery decisions shared by both HTTP clients.

Features:
- Per-API rule tables keyed by HTTP status
- Status 0 stands for a call that never got a response (connect, timeout)
- Retry-After header support
- Capped exponential backoff
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, NamedTuple, Optional, Tuple
import logging
import re

import httpx

logger = logging.getLogger(__name__)


class APISource(Enum):
    """Which remote API a failure came from."""
    LLM = "llm"
    FHIR = "fhir"


class RecoveryAction(Enum):
    """What the caller should do about a failure."""
    WAIT_AND_RETRY = "wait_and_retry"
    CHECK_CREDENTIALS = "check_credentials"
    FIX_REQUEST = "fix_request"
    ABORT = "abort"


TRANSPORT_FAILURE = 0

MAX_RETRY_DELAY_SECONDS = 60


@dataclass
class APIError:
    """
    One classified failure.

    `retry_after_seconds` is the backoff base; `get_retry_delay` scales it
    by attempt number.
    """
    source: APISource
    code: int
    message: str
    recoverable: bool
    suggested_action: RecoveryAction
    retry_after_seconds: float = 0
    raw_error: Optional[str] = None

    def should_retry(self) -> bool:
        return self.recoverable and self.suggested_action == RecoveryAction.WAIT_AND_RETRY

    def to_dict(self) -> dict:
        return {
            "source": self.source.value,
            "code": self.code,
            "message": self.message,
            "recoverable": self.recoverable,
            "action": self.suggested_action.value,
            "retry_after": self.retry_after_seconds,
            "raw_error": self.raw_error,
        }


class Rule(NamedTuple):
    message: str
    recoverable: bool
    action: RecoveryAction
    base_delay: float


def _transient(message: str, base_delay: float) -> Rule:
    return Rule(message, True, RecoveryAction.WAIT_AND_RETRY, base_delay)


def _fatal(message: str, action: RecoveryAction = RecoveryAction.ABORT) -> Rule:
    return Rule(message, False, action, 0)


# =============================================================================
# Rule tables
# =============================================================================

LLM_RULES: Dict[int, Rule] = {
    TRANSPORT_FAILURE: _transient("Chat endpoint unreachable or timed out", 2),
    400: _fatal("Chat request rejected - check model id and messages", RecoveryAction.FIX_REQUEST),
    401: _fatal("Chat endpoint refused the API key", RecoveryAction.CHECK_CREDENTIALS),
    403: _fatal("API key has no access to this model"),
    404: _fatal("Chat endpoint or model not found"),
    408: _transient("Chat request timed out", 2),
    429: _transient("Chat endpoint rate limited", 10),
    500: _transient("Chat endpoint internal error", 2),
    502: _transient("Chat endpoint bad gateway", 2),
    503: _transient("Chat endpoint overloaded", 5),
    504: _transient("Chat endpoint gateway timeout", 5),
}

FHIR_RULES: Dict[int, Rule] = {
    TRANSPORT_FAILURE: _transient("FHIR server unreachable or timed out", 1),
    400: _fatal("FHIR server rejected the resource", RecoveryAction.FIX_REQUEST),
    401: _fatal("FHIR server refused the bearer token", RecoveryAction.CHECK_CREDENTIALS),
    403: _fatal("FHIR token lacks the required scopes"),
    404: _fatal("FHIR resource not found"),
    410: _fatal("FHIR resource was deleted"),
    412: _fatal("FHIR version conflict", RecoveryAction.FIX_REQUEST),
    422: _fatal("FHIR resource failed server validation", RecoveryAction.FIX_REQUEST),
    429: _transient("FHIR server rate limited", 5),
    500: _transient("FHIR server internal error", 1),
    502: _transient("FHIR server bad gateway", 1),
    503: _transient("FHIR server unavailable", 2),
}

RULES: Dict[APISource, Dict[int, Rule]] = {
    APISource.LLM: LLM_RULES,
    APISource.FHIR: FHIR_RULES,
}

# Substring -> status, tried in order when an exception carries no status
MESSAGE_HINTS: Tuple[Tuple[Tuple[str, ...], int], ...] = (
    (("rate limit", "too many"), 429),
    (("unauthorized", "authentication"), 401),
    (("not found",), 404),
    (("timeout", "timed out", "connect"), TRANSPORT_FAILURE),
)


def _unlisted_rule(code: int) -> Rule:
    if code >= 500:
        return _transient(f"Unknown error (code {code})", 2)
    return _fatal(f"Unknown error (code {code})")


def create_api_error(source: APISource, code: int, raw_error: str = "") -> APIError:
    """
    Classify `code` from `source`.

    Statuses missing from the table are retried only when they are 5xx.
    """
    rule = RULES[source].get(code) or _unlisted_rule(code)
    return APIError(
        source=source,
        code=code,
        message=rule.message,
        recoverable=rule.recoverable,
        suggested_action=rule.action,
        retry_after_seconds=rule.base_delay,
        raw_error=raw_error,
    )


def classify_response(source: APISource, response: httpx.Response) -> APIError:
    """
    Classify a non-success HTTP response.

    A Retry-After header (seconds) overrides the table's base delay.
    """
    error = create_api_error(source, response.status_code, response.text[:500])
    header = response.headers.get("retry-after")
    if header:
        try:
            error.retry_after_seconds = max(float(header), 0.0)
        except ValueError:
            logger.debug("Ignoring non-numeric Retry-After: %s", header)
    return error


def get_retry_delay(error: APIError, attempt: int) -> float:
    """
    Seconds to wait before retry number `attempt` (0-based).

    max(base, 1) * 2**attempt, capped at MAX_RETRY_DELAY_SECONDS.
    """
    delay = max(error.retry_after_seconds, 1) * (2 ** attempt)
    return min(delay, MAX_RETRY_DELAY_SECONDS)


def _status_from_text(text: str) -> int:
    lowered = text.lower()
    match = re.search(r"(?:status|http)\s*(\d{3})", lowered)
    if match:
        return int(match.group(1))
    for markers, status in MESSAGE_HINTS:
        if any(marker in lowered for marker in markers):
            return status
    return 500


def classify_from_exception(source: APISource, exception: Exception) -> APIError:
    """
    Classify an exception raised while calling `source`.

    httpx transport errors map to status 0, HTTP status errors use the
    response code, anything else falls back to message heuristics.
    """
    raw_error = str(exception) or type(exception).__name__

    if isinstance(exception, httpx.HTTPStatusError):
        return classify_response(source, exception.response)
    if isinstance(exception, httpx.TransportError):
        return create_api_error(source, TRANSPORT_FAILURE, raw_error)

    code = getattr(exception, "status_code", None)
    if code is None:
        code = getattr(getattr(exception, "response", None), "status_code", None)
    if code is None:
        code = _status_from_text(raw_error)
    return create_api_error(source, code, raw_error)
