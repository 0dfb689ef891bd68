"""
FHIR Bridge
===========

Pulls source reports from a FHIR R4 server and pushes finished letters
back as DocumentReference resources.

Features:
- GET DiagnosticReport/{id} with text taken from presentedForm,
  conclusion, or result displays (in that order)
- POST DocumentReference with the letter as a base64 text/plain
  attachment, the patient as subject, the overall score in an extension
  and a link back to the source report
- Optional bearer token, per-request timeout, retried GETs
- OperationOutcome diagnostics surfaced on rejection
"""

import asyncio
import base64
import binascii
import logging
import os
import time
from dataclasses import dataclass
from typing import Any, Awaitable, Callable, Dict, List, Optional, Tuple
from urllib.parse import urlparse

import httpx

from api_error_handler import (
    APIError,
    APISource,
    TRANSPORT_FAILURE,
    classify_from_exception,
    classify_response,
    get_retry_delay,
)
from letter_config import (
    DEFAULT_FHIR_AUTH_ENV,
    DEFAULT_FHIR_MAX_RETRIES,
    DEFAULT_FHIR_TIMEOUT_SECONDS,
    SCORE_EXTENSION_URL,
)
from logging_system import StructuredLogger
from reflexion_engine import CandidateLetter, MedicalReport, ReportSource, ReportSourceKind
from scoring import LetterScore

logger = logging.getLogger(__name__)

FHIR_JSON = "application/fhir+json"
LETTER_CONTENT_TYPE = "text/plain"

SleepFunc = Callable[[float], Awaitable[Any]]


# =============================================================================
# Exceptions
# =============================================================================

class FhirError(Exception):
    """Base exception for FHIR bridge errors."""

    def __init__(self, message: str, status_code: Optional[int] = None,
                 operation_outcome: Optional[Dict[str, Any]] = None):
        self.message = message
        self.status_code = status_code
        self.operation_outcome = operation_outcome
        super().__init__(message)


class FhirTransportError(FhirError):
    """Server unreachable or timed out."""
    pass


class FhirNotFoundError(FhirError):
    """Requested resource does not exist."""
    pass


class FhirRejectedError(FhirError):
    """Server refused the request; message carries its diagnostics."""
    pass


class FhirContentError(FhirError):
    """Resource exists but holds nothing usable."""
    pass


# =============================================================================
# Configuration and References
# =============================================================================

@dataclass
class FhirServerConfig:
    """FHIR endpoint settings."""
    base_url: str
    auth_token: Optional[str] = None
    timeout_seconds: float = DEFAULT_FHIR_TIMEOUT_SECONDS
    max_retries: int = DEFAULT_FHIR_MAX_RETRIES
    auth_env_var: str = DEFAULT_FHIR_AUTH_ENV

    def validate(self) -> List[str]:
        errors = []
        parsed = urlparse(self.base_url or "")
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            errors.append(f"fhir.base_url: must be an http(s) URL, got '{self.base_url}'")
        if self.timeout_seconds <= 0:
            errors.append("fhir.timeout_seconds: must be > 0")
        if self.max_retries < 0:
            errors.append("fhir.max_retries: must be a non-negative integer")
        return errors

    @property
    def token(self) -> Optional[str]:
        """Configured token, else the environment variable."""
        return self.auth_token or os.environ.get(self.auth_env_var) or None

    def to_dict(self) -> Dict[str, Any]:
        # Token deliberately omitted
        return {
            "base_url": self.base_url,
            "timeout_seconds": self.timeout_seconds,
            "max_retries": self.max_retries,
            "auth_env_var": self.auth_env_var,
        }


@dataclass(frozen=True)
class FhirReportRef:
    """Pointer to a DiagnosticReport on the server."""
    id: str
    patient_ref: Optional[str] = None
    resource_type: str = "DiagnosticReport"

    def __post_init__(self):
        if not self.id or not self.id.strip():
            raise FhirError("FhirReportRef.id must be non-empty")

    @property
    def reference(self) -> str:
        return f"{self.resource_type}/{self.id}"


# =============================================================================
# Resource helpers
# =============================================================================

def _decode_attachment(attachment: Dict[str, Any]) -> Optional[str]:
    data = attachment.get("data")
    if not data:
        return None
    try:
        return base64.b64decode(data, validate=True).decode("utf-8")
    except (binascii.Error, ValueError, UnicodeDecodeError) as e:
        logger.warning(f"Skipping undecodable attachment: {e}")
        return None


def extract_report_text(resource: Dict[str, Any]) -> str:
    """
    Report text from a DiagnosticReport.

    Priority: text attachment in presentedForm, then conclusion, then the
    display texts of result references joined by newlines.

    Raises:
        FhirContentError: "no extractable text"
    """
    for attachment in resource.get("presentedForm") or []:
        content_type = (attachment.get("contentType") or LETTER_CONTENT_TYPE).lower()
        if not content_type.startswith("text/"):
            continue
        text = _decode_attachment(attachment)
        if text and text.strip():
            return text

    conclusion = resource.get("conclusion")
    if conclusion and conclusion.strip():
        return conclusion

    displays = [
        r.get("display", "").strip()
        for r in resource.get("result") or []
        if isinstance(r, dict) and (r.get("display") or "").strip()
    ]
    if displays:
        return "\n".join(displays)

    raise FhirContentError(f"DiagnosticReport/{resource.get('id', '?')}: no extractable text")


def _resource_body(response: httpx.Response, reference: str) -> Dict[str, Any]:
    """JSON object body of a FHIR response."""
    try:
        body = response.json()
    except ValueError as e:
        raise FhirContentError(f"{reference}: response is not JSON ($e)", response.status_code)
    if not isinstance(body, dict):
        raise FhirContentError(
            f"{reference}: expected a JSON object, got {type(body).__name__}", response.status_code
        )
    return body


def build_document_reference(
    patient_ref: str,
    letter: CandidateLetter,
    score: LetterScore,
    source_ref: Optional[str] = None,
) -> Dict[str, Any]:
    """DocumentReference resource carrying the letter."""
    encoded = base64.b64encode(letter.body.encode("utf-8")).decode("ascii")
    resource: Dict[str, Any] = {
        "resourceType": "DocumentReference",
        "status": "current",
        "docStatus": "final",
        "type": {"text": "Patient-friendly radiology letter"},
        "subject": {"reference": patient_ref},
        "description": "Patient-friendly version of a radiology report",
        "extension": [
            {"url": SCORE_EXTENSION_URL, "valueDecimal": round(score.overall, 6)},
        ],
        "content": [
            {
                "attachment": {
                    "contentType": LETTER_CONTENT_TYPE,
                    "language": "en",
                    "data": encoded,
                    "title": "Patient letter",
                }
            }
        ],
    }
    if source_ref:
        resource["context"] = {"related": [{"reference": source_ref}]}
    return resource


def _operation_outcome_text(
    response: httpx.Response,
) -> Tuple[Optional[str], Optional[Dict[str, Any]]]:
    try:
        data = response.json()
    except ValueError:
        return None, None
    if not isinstance(data, dict) or data.get("resourceType") != "OperationOutcome":
        return None, None
    messages = []
    for issue in data.get("issue", []):
        text = issue.get("diagnostics") or (issue.get("details") or {}).get("text")
        if text:
            messages.append(text)
    return "; ".join(messages) or None, data


# =============================================================================
# Client
# =============================================================================

class FhirClient:
    """
    Async FHIR R4 client for the two operations the pipeline needs.

    Usage:
        async with FhirClient(FhirServerConfig("https://fhir.example/r4")) as client:
            report = await client.fetch_report(FhirReportRef("dr-1"))
            doc_id = await client.push_letter(report.source.patient_ref, letter, score,
                                              source_ref="DiagnosticReport/dr-1")
    """

    def __init__(
        self,
        config: FhirServerConfig,
        transport: Optional[httpx.AsyncBaseTransport] = None,
        sleep: SleepFunc = asyncio.sleep,
        events: Optional[StructuredLogger] = None,
    ):
        errors = config.validate()
        if errors:
            raise FhirError("; ".join(errors))
        self.config = config
        self._sleep = sleep
        self.events = events
        self._client = httpx.AsyncClient(
            base_url=config.base_url.rstrip("/") + "/",
            timeout=httpx.Timeout(config.timeout_seconds),
            transport=transport,
            headers=self._get_headers(),
        )

    def _get_headers(self) -> Dict[str, str]:
        headers = {"Accept": FHIR_JSON}
        token = self.config.token
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    async def __aenter__(self) -> "FhirClient":
        return self

    async def __aexit__(self, *exc) -> None:
        await self.aclose()

    async def aclose(self) -> None:
        await self._client.aclose()

    async def _request(self, method: str, path: str, retry: bool,
                       **kwargs) -> httpx.Response:
        attempts = self.config.max_retries + 1 if retry else 1
        error: Optional[APIError] = None
        response: Optional[httpx.Response] = None

        for attempt in range(attempts):
            start = time.monotonic()
            response = None
            try:
                response = await self._client.request(method, path, **kwargs)
            except httpx.TransportError as e:
                error = classify_from_exception(APISource.FHIR, e)
            else:
                if self.events:
                    self.events.log_fhir_call(
                        method, path, response.status_code, (time.monotonic() - start) * 1000
                    )
                if response.is_success:
                    return response
                error = classify_response(APISource.FHIR, response)

            if not error.should_retry() or attempt == attempts - 1:
                break
            delay = get_retry_delay(error, attempt)
            logger.warning(f"FHIR {method} {path}: {error.message}, retrying in {delay:.1f}s")
            await self._sleep(delay)

        if error.code == TRANSPORT_FAILURE or response is None:
            if self.events:
                self.events.log_fhir_call(method, path, TRANSPORT_FAILURE)
            raise FhirTransportError(
                f"FHIR {method} {path}: {error.message} ({error.raw_error})"
            )

        diagnostics, outcome = _operation_outcome_text(response)
        detail = diagnostics or response.text[:300] or error.message
        status = response.status_code
        if status == 404 or status == 410:
            raise FhirNotFoundError(f"{path} not found: {detail}", status, outcome)
        if 400 <= status < 500:
            raise FhirRejectedError(f"{method} {path} rejected ({status}): {detail}", status, outcome)
        raise FhirError(f"{method} {path} failed ({status}): {detail}", status, outcome)

    async def fetch_report(self, ref: FhirReportRef) -> MedicalReport:
        """
        GET the DiagnosticReport and wrap its text as a MedicalReport.

        Raises:
            FhirTransportError, FhirNotFoundError, FhirError: HTTP failures
            FhirContentError: wrong resource type or no extractable text
        """
        response = await self._request("GET", ref.reference, retry=True)
        resource = _resource_body(response, ref.reference)

        if resource.get("resourceType") != ref.resource_type:
            raise FhirContentError(
                f"{ref.reference}: expected {ref.resource_type}, got {resource.get('resourceType')}"
            )

        body = extract_report_text(resource)
        patient_ref = (resource.get("subject") or {}).get("reference") or ref.patient_ref
        return MedicalReport(
            body=body,
            source=ReportSource(
                kind=ReportSourceKind.FHIR,
                report_id=ref.id,
                server=self.config.base_url,
                patient_ref=patient_ref,
            ),
            report_id=ref.id,
        )

    async def push_letter(
        self,
        patient_ref: str,
        letter: CandidateLetter,
        score: LetterScore,
        source_ref: Optional[str] = None,
    ) -> str:
        """
        POST a DocumentReference for the letter and return its server id.

        POST is not retried.

        Raises:
            FhirRejectedError: server refused the resource (diagnostics included)
            FhirTransportError: server unreachable
        """
        if not patient_ref:
            raise FhirError("push_letter requires a patient reference")

        resource = build_document_reference(patient_ref, letter, score, source_ref)
        response = await self._request(
            "POST",
            "DocumentReference",
            retry=False,
            json=resource,
            headers={"Content-Type": FHIR_JSON},
        )

        resource_id = None
        try:
            created = response.json()
        except ValueError:
            created = None
        if isinstance(created, dict):
            resource_id = created.get("id")
        if not resource_id:
            location = response.headers.get("location", "")
            parts = [p for p in location.split("/") if p]
            if "DocumentReference" in parts:
                idx = parts.index("DocumentReference")
                if idx + 1 < len(parts):
                    resource_id = parts[idx + 1]
        if not resource_id:
            raise FhirContentError("Server created the DocumentReference but returned no id",
                                   response.status_code)

        logger.info(f"Pushed DocumentReference/{resource_id} for {patient_ref}")
        return resource_id

    async def fetch_document_text(self, document_id: str) -> str:
        """
        Decoded text of a DocumentReference's first attachment.

        Raises:
            FhirContentError: body is not a JSON object, or no decodable attachment
        """
        reference = f"DocumentReference/{document_id}"
        response = await self._request("GET", reference, retry=True)
        resource = _resource_body(response, reference)
        for content in resource.get("content") or []:
            text = _decode_attachment(content.get("attachment") or {})
            if text is not None:
                return text
        raise FhirContentError(f"DocumentReference/{document_id}: no decodable attachment")
