"""
Test Helpers
============

Fixture data and HTTP stubs shared by the test modules:
- A small CODE<TAB>DESCRIPTION table (tests/data) standing in for the full code set
- The four-code liver/diabetes scenario (half the codes, then all four)
- Script builders for the scripted backend
- StubFhirServer: in-memory FHIR R4 store behind httpx.MockTransport
- ChatStub: queued chat-completions responses behind httpx.MockTransport
- A 16-report corpus builder for evaluation tests
"""

import base64
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import httpx

from letter_parser import format_code_list, format_generation

REGISTRY_TABLE = Path(__file__).resolve().parent / "data" / "icd10cm_subset.tsv"

REPORT_TEXT = (
    "CT ABDOMEN WITH CONTRAST\n"
    "Findings: Diffuse low attenuation of the liver consistent with hepatic steatosis. "
    "No focal hepatic lesion. Gallbladder, pancreas, spleen and kidneys are unremarkable.\n"
    "History: Type 2 diabetes mellitus, essential hypertension and hyperlipidemia.\n"
    "Impression: Hepatic steatosis."
)

# FKGL of this letter is 5.92 (3 sentences, 52 words, 65 syllables)
LETTER_TEXT = (
    "Your scan shows a small amount of fat in your liver, and your blood fat level "
    "is high as well. You also have type two diabetes and high blood pressure, which "
    "your doctor can treat with medicine. Please talk with your doctor about these "
    "results and the next steps for your care."
)
LETTER_GRADE = 0.39 * (52 / 3) + 11.8 * (65 / 52) - 15.59

SCENARIO_CODES: List[Tuple[str, str]] = [
    ("E11.9", "Type 2 diabetes mellitus without complications"),
    ("I10", "Essential (primary) hypertension"),
    ("E78.5", "Hyperlipidemia, unspecified"),
    ("K76.0", "Fatty (change of) liver, not elsewhere classified"),
]
SCENARIO_CODE_SET = frozenset(code for code, _ in SCENARIO_CODES)

# Codes with descriptions, all present in the bundled registry
CODE_POOL: List[Tuple[str, str]] = SCENARIO_CODES + [
    ("R91.1", "Solitary pulmonary nodule"),
    ("J90", "Pleural effusion, not elsewhere classified"),
    ("E04.1", "Nontoxic single thyroid nodule"),
    ("N20.0", "Calculus of kidney"),
    ("K80.20", "Calculus of gallbladder without cholecystitis without obstruction"),
    ("M47.816", "Spondylosis without myelopathy or radiculopathy, lumbar region"),
    ("J18.9", "Pneumonia, unspecified organism"),
    ("I25.10", "Atherosclerotic heart disease of native coronary artery without angina pectoris"),
]


def generation(codes: Sequence[Tuple[str, str]], letter: str = LETTER_TEXT) -> str:
    """A generation completion declaring the given codes."""
    return format_generation(letter, codes)


def scenario_script() -> Dict[str, str]:
    """Half the codes in trial 0, all four in trial 1."""
    return {
        "extract_codes/0": format_code_list(SCENARIO_CODES),
        "generate_letter/0": generation(SCENARIO_CODES[:2]),
        "generate_letter/1": generation(SCENARIO_CODES),
    }


def write_script(path: Path, script: Dict[str, str]) -> Path:
    path.write_text(json.dumps(script, indent=2, sort_keys=True), encoding="utf-8")
    return path


def build_corpus(corpus_dir: Path, n_reports: int = 16, identical_arms: bool = False) -> List[str]:
    """
    Write n_reports report/script pairs and return their ids.

    Each report has 2 or 4 reference codes. Trial 0 declares the first
    half (all of them when identical_arms), trial 1 declares all.
    """
    corpus_dir.mkdir(parents=True, exist_ok=True)
    report_ids = []
    for i in range(n_reports):
        report_id = f"report_{i:02d}"
        size = 4 if i % 2 == 0 else 2
        codes = [CODE_POOL[(i + k * 3) % len(CODE_POOL)] for k in range(size)]
        findings = "; ".join(description.lower() for _, description in codes)

        (corpus_dir / f"{report_id}.txt").write_text(
            f"CT CHEST ABDOMEN PELVIS (study {i + 1})\n"
            f"Findings: {findings}.\n"
            "Impression: Findings as described above, correlate clinically.\n",
            encoding="utf-8",
        )
        first = codes if identical_arms else codes[: size // 2]
        write_script(corpus_dir / f"{report_id}.script.json", {
            "extract_codes/0": format_code_list(codes),
            "generate_letter/0": generation(first),
            "generate_letter/1": generation(codes),
        })
        report_ids.append(report_id)
    return report_ids


# =============================================================================
# FHIR stub
# =============================================================================

class StubFhirServer:
    """
    In-memory FHIR R4 server for httpx.MockTransport.

    Supports GET {type}/{id} and POST DocumentReference. Set reject_posts
    to answer POSTs with a 422 OperationOutcome, or fail_next to answer
    the next N requests with that status.
    """

    def __init__(self, base_url: str = "https://fhir.test/r4"):
        self.base_url = base_url.rstrip("/")
        self.resources: Dict[Tuple[str, str], Dict[str, Any]] = {}
        self.requests: List[httpx.Request] = []
        self.reject_posts: Optional[str] = None
        self.fail_next: List[int] = []
        self._next_id = 1

    @property
    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self.handler)

    def add(self, resource: Dict[str, Any]) -> Dict[str, Any]:
        self.resources[(resource["resourceType"], resource["id"])] = json.loads(json.dumps(resource))
        return resource

    def add_diagnostic_report(self, report_id: str, text: Optional[str] = None,
                              conclusion: Optional[str] = None,
                              results: Optional[List[str]] = None,
                              patient_ref: str = "Patient/p1") -> Dict[str, Any]:
        resource: Dict[str, Any] = {
            "resourceType": "DiagnosticReport",
            "id": report_id,
            "status": "final",
            "code": {"text": "CT abdomen"},
            "subject": {"reference": patient_ref},
        }
        if text is not None:
            resource["presentedForm"] = [{
                "contentType": "text/plain",
                "data": base64.b64encode(text.encode("utf-8")).decode("ascii"),
            }]
        if conclusion is not None:
            resource["conclusion"] = conclusion
        if results is not None:
            resource["result"] = [
                {"reference": f"Observation/o{i}", "display": d} for i, d in enumerate(results)
            ]
        return self.add(resource)

    def get(self, resource_type: str, resource_id: str) -> Optional[Dict[str, Any]]:
        return self.resources.get((resource_type, resource_id))

    def _outcome(self, status: int, diagnostics: str) -> httpx.Response:
        return httpx.Response(status, json={
            "resourceType": "OperationOutcome",
            "issue": [{"severity": "error", "code": "processing", "diagnostics": diagnostics}],
        })

    def handler(self, request: httpx.Request) -> httpx.Response:
        self.requests.append(request)
        if self.fail_next:
            return self._outcome(self.fail_next.pop(0), "temporary failure")

        path = request.url.path
        prefix = httpx.URL(self.base_url).path.rstrip("/")
        parts = [p for p in path[len(prefix):].split("/") if p]

        if request.method == "GET" and len(parts) == 2:
            resource = self.get(parts[0], parts[1])
            if resource is None:
                return self._outcome(404, f"{parts[0]}/{parts[1]} is not known")
            return httpx.Response(200, json=resource)

        if request.method == "POST" and parts == ["DocumentReference"]:
            if self.reject_posts:
                return self._outcome(422, self.reject_posts)
            resource = json.loads(request.content)
            resource["id"] = f"doc-{self._next_id}"
            self._next_id += 1
            self.add(resource)
            return httpx.Response(
                201,
                json=resource,
                headers={"Location": f"{self.base_url}/DocumentReference/{resource['id']}/_history/1"},
            )

        return self._outcome(400, f"unsupported {request.method} {path}")


# =============================================================================
# Chat-completions stub
# =============================================================================

class ChatStub:
    """
    Queued chat-completions replies; the last one repeats.

    Each reply is (status, json_body) or (status, json_body, headers).
    """

    def __init__(self, replies: List[tuple]):
        self.replies = list(replies)
        self.requests: List[httpx.Request] = []

    @staticmethod
    def completion(text: str, tokens: int = 42) -> tuple:
        return (200, {
            "id": "chatcmpl-test",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}],
            "usage": {"total_tokens": tokens},
        })

    @property
    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self.handler)

    def handler(self, request: httpx.Request) -> httpx.Response:
        self.requests.append(request)
        reply = self.replies.pop(0) if len(self.replies) > 1 else self.replies[0]
        status, body = reply[0], reply[1]
        headers = reply[2] if len(reply) > 2 else None
        return httpx.Response(status, json=body, headers=headers)

    def sent_payloads(self) -> List[Dict[str, Any]]:
        return [json.loads(r.content) for r in self.requests]
