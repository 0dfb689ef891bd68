"""
Chat Completions Provider
=========================

Live backend speaking the chat-completions wire protocol over HTTP.

POSTs {model, messages, temperature, max_tokens} with a bearer token
read from an environment variable and returns the first choice's
message content. Transient failures (transport errors, 429, 5xx) are
retried with capped exponential backoff.
"""

import asyncio
import logging
import os
import time
from typing import Any, Awaitable, Callable, Optional, Tuple

import httpx

from api_error_handler import (
    APIError,
    APISource,
    TRANSPORT_FAILURE,
    classify_from_exception,
    classify_response,
    get_retry_delay,
)

from .base import (
    BaseProvider,
    LlmRequest,
    ProviderQueryError,
    ProviderResponseError,
    ProviderValidationError,
)
from .config import GatewayConfig

logger = logging.getLogger(__name__)

SleepFunc = Callable[[float], Awaitable[Any]]


class ChatCompletionsProvider(BaseProvider):
    """
    Chat-completions HTTP backend.

    Configuration:
        endpoint: Full chat-completions URL
        auth_env_var: Environment variable holding the bearer token
        timeout_seconds: Per-request timeout
        max_retries: Retries after the first attempt for transient errors

    The transport and sleep hooks exist so tests can run against an
    httpx.MockTransport without waiting on backoff.
    """

    def __init__(
        self,
        config: GatewayConfig,
        transport: Optional[httpx.AsyncBaseTransport] = None,
        sleep: SleepFunc = asyncio.sleep,
        api_key: Optional[str] = None,
    ):
        super().__init__()
        self.config = config
        self._transport = transport
        self._sleep = sleep
        self._api_key = api_key
        self._client: Optional[httpx.AsyncClient] = None

    @property
    def name(self) -> str:
        return "live"

    @property
    def api_key(self) -> Optional[str]:
        return self._api_key or os.environ.get(self.config.auth_env_var)

    async def validate(self) -> bool:
        """
        Check that a bearer token is available.

        Raises:
            ProviderValidationError: token missing
        """
        if not self.api_key:
            raise ProviderValidationError(
                self.name,
                f"No API key configured. Set {self.config.auth_env_var}",
                recoverable=False,
            )
        self.stats.on_ready()
        return True

    def _get_client(self) -> httpx.AsyncClient:
        if self._client is None:
            self._client = httpx.AsyncClient(
                timeout=httpx.Timeout(self.config.timeout_seconds),
                transport=self._transport,
            )
        return self._client

    def _get_headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    async def complete(self, request: LlmRequest) -> str:
        """
        Send one request, retrying transient failures.

        Raises:
            ProviderQueryError: transport failure after all retries
            ProviderResponseError: non-success status or empty completion
        """
        client = self._get_client()
        payload = request.to_payload()
        attempts = self.config.max_retries + 1
        error: Optional[APIError] = None

        for attempt in range(attempts):
            start = time.monotonic()
            try:
                response = await client.post(
                    self.config.endpoint,
                    json=payload,
                    headers=self._get_headers(),
                )
            except httpx.TransportError as e:
                error = classify_from_exception(APISource.LLM, e)
            else:
                if response.is_success:
                    text, tokens = self._extract_text(response)
                    self.stats.on_success((time.monotonic() - start) * 1000, tokens)
                    return text
                error = classify_response(APISource.LLM, response)

            if not error.should_retry() or attempt == attempts - 1:
                break

            delay = get_retry_delay(error, attempt)
            self.stats.on_retry(error.message)
            logger.warning(
                f"{request.key or 'request'}: {error.message} (code {error.code}), "
                f"retry {attempt + 1}/{self.config.max_retries} in {delay:.1f}s"
            )
            await self._sleep(delay)

        self.stats.on_failure(error.message)
        if error.code == TRANSPORT_FAILURE:
            raise ProviderQueryError(
                self.name,
                f"{error.message} after {attempt + 1} attempt(s): {error.raw_error}",
            )
        raise ProviderResponseError(
            self.name,
            f"HTTP {error.code}: {error.message}",
            status_code=error.code,
            recoverable=error.recoverable,
        )

    def _extract_text(self, response: httpx.Response) -> Tuple[str, int]:
        try:
            data = response.json()
            content = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise ProviderResponseError(self.name, f"Malformed completion body: {e}")

        if not isinstance(content, str) or not content.strip():
            raise ProviderResponseError(self.name, "empty completion")

        usage = data.get("usage") or {}
        return content, int(usage.get("total_tokens", 0) or 0)

    async def aclose(self) -> None:
        if self._client is not None:
            await self._client.aclose()
            self._client = None
