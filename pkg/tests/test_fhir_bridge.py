"""
FHIR Bridge Tests
=================

Tests for report text extraction, DocumentReference construction and
the async client, run against an in-memory FHIR server.
"""

import base64
import copy

import httpx
import pytest

from fhir_bridge import (
    FhirClient,
    FhirContentError,
    FhirError,
    FhirNotFoundError,
    FhirRejectedError,
    FhirReportRef,
    FhirServerConfig,
    FhirTransportError,
    build_document_reference,
    extract_report_text,
)
from letter_config import SCORE_EXTENSION_URL
from letter_parser import DeclaredCode
from reflexion_engine import CandidateLetter, ReportSourceKind
from scoring import LetterScore

from tests.helpers import LETTER_TEXT, REPORT_TEXT, StubFhirServer

BASE_URL = "https://fhir.test/r4"


def letter() -> CandidateLetter:
    return CandidateLetter(
        body=LETTER_TEXT,
        declared_codes=(DeclaredCode("I10", "Essential (primary) hypertension"),),
        trial_index=1,
        candidate_index=0,
    )


def score(overall: float = 0.9976) -> LetterScore:
    return LetterScore(accuracy=1.0, grade=5.92, readability=0.992, overall=overall)


def client_for(stub: StubFhirServer, sleep=None, **config) -> FhirClient:
    kwargs = {"transport": stub.transport}
    if sleep is not None:
        kwargs["sleep"] = sleep
    return FhirClient(FhirServerConfig(BASE_URL, **config), **kwargs)


class TestServerConfig:
    """Tests for FhirServerConfig and FhirReportRef."""

    def test_valid(self):
        """An https URL with defaults validates."""
        assert FhirServerConfig(BASE_URL).validate() == []

    @pytest.mark.parametrize("url", ["", "fhir.test/r4", "ftp://fhir.test", "https://"])
    def test_bad_url(self, url):
        """Only absolute http(s) URLs are accepted."""
        assert FhirServerConfig(url).validate()

    def test_token_from_env(self, monkeypatch):
        """The environment supplies the token when none is configured."""
        monkeypatch.setenv("FHIR_TEST_TOKEN", "env-token")
        config = FhirServerConfig(BASE_URL, auth_env_var="FHIR_TEST_TOKEN")
        assert config.token == "env-token"
        assert "env-token" not in str(config.to_dict())

    def test_client_rejects_bad_config(self):
        """The client validates its config."""
        with pytest.raises(FhirError):
            FhirClient(FhirServerConfig("not a url"))

    def test_report_ref(self):
        """References render as Type/id; empty ids are rejected."""
        assert FhirReportRef("dr-1").reference == "DiagnosticReport/dr-1"
        with pytest.raises(FhirError):
            FhirReportRef(" ")


class TestExtractReportText:
    """Tests for extract_report_text."""

    def encoded(self, text: str) -> str:
        return base64.b64encode(text.encode("utf-8")).decode("ascii")

    def test_presented_form_first(self):
        """A text attachment wins over conclusion and results."""
        resource = {
            "id": "dr-1",
            "presentedForm": [{"contentType": "text/plain", "data": self.encoded(REPORT_TEXT)}],
            "conclusion": "Hepatic steatosis.",
            "result": [{"display": "Liver attenuation low"}],
        }
        assert extract_report_text(resource) == REPORT_TEXT

    def test_non_text_attachment_skipped(self):
        """PDF attachments are not read; the conclusion is used."""
        resource = {
            "presentedForm": [{"contentType": "application/pdf", "data": self.encoded("%PDF")}],
            "conclusion": "Hepatic steatosis.",
        }
        assert extract_report_text(resource) == "Hepatic steatosis."

    def test_conclusion_fallback(self):
        """Without presentedForm the conclusion is the text."""
        assert extract_report_text({"conclusion": "No acute findings."}) == "No acute findings."

    def test_result_display_fallback(self):
        """Result displays are joined by newlines as a last resort."""
        resource = {"result": [{"display": "Pleural effusion"}, {"reference": "Observation/2"},
                               {"display": "Lung nodule 4 mm"}]}
        assert extract_report_text(resource) == "Pleural effusion\nLung nodule 4 mm"

    def test_no_text(self):
        """A report with nothing readable is a content error."""
        with pytest.raises(FhirContentError, match="no extractable text"):
            extract_report_text({"id": "dr-9", "presentedForm": [{"contentType": "text/plain", "data": "%%%"}]})


class TestBuildDocumentReference:
    """Tests for build_document_reference."""

    def test_shape(self):
        """Subject, attachment, score extension and status are set."""
        resource = build_document_reference("Patient/p1", letter(), score(0.12345678))
        assert resource["resourceType"] == "DocumentReference"
        assert resource["status"] == "current"
        assert resource["subject"] == {"reference": "Patient/p1"}
        attachment = resource["content"][0]["attachment"]
        assert attachment["contentType"] == "text/plain"
        assert base64.b64decode(attachment["data"]).decode("utf-8") == LETTER_TEXT
        assert resource["extension"] == [{"url": SCORE_EXTENSION_URL, "valueDecimal": 0.123457}]
        assert "context" not in resource

    def test_source_link(self):
        """The source report is linked under context.related."""
        resource = build_document_reference("Patient/p1", letter(), score(), "DiagnosticReport/dr-1")
        assert resource["context"] == {"related": [{"reference": "DiagnosticReport/dr-1"}]}


class TestFhirClient:
    """Tests for the async client against the stub server."""

    @pytest.mark.asyncio
    async def test_fetch_report(self, stub_fhir):
        """The report text and patient come back as a MedicalReport."""
        stub_fhir.add_diagnostic_report("dr-1", text=REPORT_TEXT, patient_ref="Patient/p7")
        async with client_for(stub_fhir) as client:
            report = await client.fetch_report(FhirReportRef("dr-1"))

        assert report.body == REPORT_TEXT
        assert report.report_id == "dr-1"
        assert report.source.kind == ReportSourceKind.FHIR
        assert report.source.patient_ref == "Patient/p7"
        assert report.source.server == BASE_URL
        assert stub_fhir.requests[0].headers["accept"] == "application/fhir+json"

    @pytest.mark.asyncio
    async def test_fetch_missing(self, stub_fhir):
        """404 raises FhirNotFoundError with the server diagnostics."""
        async with client_for(stub_fhir) as client:
            with pytest.raises(FhirNotFoundError, match="is not known") as exc_info:
                await client.fetch_report(FhirReportRef("absent"))
        assert exc_info.value.status_code == 404
        assert exc_info.value.operation_outcome["resourceType"] == "OperationOutcome"

    @pytest.mark.asyncio
    async def test_fetch_wrong_type(self, stub_fhir):
        """A resource of another type is a content error."""
        # Server answers DiagnosticReport/dr-2 with an Observation body
        stub_fhir.resources[("DiagnosticReport", "dr-2")] = {"resourceType": "Observation", "id": "dr-2"}
        async with client_for(stub_fhir) as client:
            with pytest.raises(FhirContentError, match="expected DiagnosticReport"):
                await client.fetch_report(FhirReportRef("dr-2"))

    @pytest.mark.asyncio
    async def test_fetch_without_text(self, stub_fhir):
        """A report with no text is a content error."""
        stub_fhir.add_diagnostic_report("dr-3")
        async with client_for(stub_fhir) as client:
            with pytest.raises(FhirContentError, match="no extractable text"):
                await client.fetch_report(FhirReportRef("dr-3"))

    @pytest.mark.asyncio
    async def test_get_retried(self, stub_fhir, no_sleep):
        """A transient 503 on GET is retried after a backoff."""
        stub_fhir.add_diagnostic_report("dr-1", conclusion="Hepatic steatosis.")
        stub_fhir.fail_next = [503]
        async with client_for(stub_fhir, sleep=no_sleep) as client:
            report = await client.fetch_report(FhirReportRef("dr-1"))
        assert report.body == "Hepatic steatosis."
        assert len(stub_fhir.requests) == 2
        assert no_sleep.delays == [2]

    @pytest.mark.asyncio
    async def test_transport_failure(self, no_sleep):
        """An unreachable server raises FhirTransportError after retries."""
        calls = []

        def refuse(request: httpx.Request) -> httpx.Response:
            calls.append(request)
            raise httpx.ConnectError("connection refused", request=request)

        client = FhirClient(FhirServerConfig(BASE_URL, max_retries=1),
                            transport=httpx.MockTransport(refuse), sleep=no_sleep)
        with pytest.raises(FhirTransportError):
            await client.fetch_report(FhirReportRef("dr-1"))
        await client.aclose()
        assert len(calls) == 2

    @pytest.mark.asyncio
    async def test_push_round_trip(self, stub_fhir):
        """The pushed letter reads back identical and the source report is untouched."""
        source = stub_fhir.add_diagnostic_report("dr-1", text=REPORT_TEXT)
        before = copy.deepcopy(source)

        async with client_for(stub_fhir) as client:
            document_id = await client.push_letter("Patient/p1", letter(), score(),
                                                   source_ref="DiagnosticReport/dr-1")
            text = await client.fetch_document_text(document_id)

        assert document_id == "doc-1"
        assert text == LETTER_TEXT
        assert stub_fhir.get("DiagnosticReport", "dr-1") == before
        stored = stub_fhir.get("DocumentReference", "doc-1")
        assert stored["context"]["related"] == [{"reference": "DiagnosticReport/dr-1"}]
        post = stub_fhir.requests[0]
        assert post.method == "POST"
        assert post.headers["content-type"] == "application/fhir+json"

    @pytest.mark.asyncio
    async def test_push_id_from_location(self):
        """When the body has no id, the Location header supplies it."""

        def created(request: httpx.Request) -> httpx.Response:
            return httpx.Response(201, headers={
                "Location": f"{BASE_URL}/DocumentReference/abc-9/_history/1"
            })

        async with FhirClient(FhirServerConfig(BASE_URL), transport=httpx.MockTransport(created)) as client:
            assert await client.push_letter("Patient/p1", letter(), score()) == "abc-9"

    @pytest.mark.asyncio
    async def test_push_rejected(self, stub_fhir):
        """A 422 surfaces the OperationOutcome diagnostics."""
        stub_fhir.reject_posts = "subject: Patient/p1 does not exist"
        async with client_for(stub_fhir) as client:
            with pytest.raises(FhirRejectedError, match="Patient/p1 does not exist") as exc_info:
                await client.push_letter("Patient/p1", letter(), score())
        assert exc_info.value.status_code == 422

    @pytest.mark.asyncio
    async def test_push_not_retried(self, stub_fhir, no_sleep):
        """POST is sent once even on a retryable status."""
        stub_fhir.fail_next = [503]
        async with client_for(stub_fhir, sleep=no_sleep) as client:
            with pytest.raises(FhirError) as exc_info:
                await client.push_letter("Patient/p1", letter(), score())
        assert exc_info.value.status_code == 503
        assert len(stub_fhir.requests) == 1
        assert no_sleep.delays == []

    @pytest.mark.asyncio
    async def test_push_requires_patient(self, stub_fhir):
        """No patient reference, no push."""
        async with client_for(stub_fhir) as client:
            with pytest.raises(FhirError, match="patient reference"):
                await client.push_letter("", letter(), score())
        assert stub_fhir.requests == []

    @pytest.mark.asyncio
    async def test_bearer_token(self, stub_fhir):
        """A configured token is sent as a bearer header."""
        stub_fhir.add_diagnostic_report("dr-1", conclusion="Normal study.")
        async with client_for(stub_fhir, auth_token="secret") as client:
            await client.fetch_report(FhirReportRef("dr-1"))
        assert stub_fhir.requests[0].headers["authorization"] == "Bearer secret"

    @pytest.mark.asyncio
    async def test_fetch_array_body(self):
        """A JSON array where a resource was expected is a content error."""

        def array(request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, json=[{"resourceType": "DiagnosticReport"}])

        async with FhirClient(FhirServerConfig(BASE_URL), transport=httpx.MockTransport(array)) as client:
            with pytest.raises(FhirContentError, match="expected a JSON object, got list"):
                await client.fetch_report(FhirReportRef("dr-1"))
            with pytest.raises(FhirContentError, match="DocumentReference/doc-1"):
                await client.fetch_document_text("doc-1")

    @pytest.mark.asyncio
    async def test_fetch_non_json_document(self):
        """A DocumentReference body that is not JSON is a content error."""

        def html(request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, text="<html>proxy login</html>")

        async with FhirClient(FhirServerConfig(BASE_URL), transport=httpx.MockTransport(html)) as client:
            with pytest.raises(FhirContentError, match="not JSON"):
                await client.fetch_document_text("doc-1")

    @pytest.mark.asyncio
    async def test_push_array_body_uses_location(self):
        """A non-object create response falls back to the Location header."""

        def created(request: httpx.Request) -> httpx.Response:
            return httpx.Response(201, json=["created"], headers={
                "Location": f"{BASE_URL}/DocumentReference/abc-7"
            })

        async with FhirClient(FhirServerConfig(BASE_URL), transport=httpx.MockTransport(created)) as client:
            assert await client.push_letter("Patient/p1", letter(), score()) == "abc-7"
