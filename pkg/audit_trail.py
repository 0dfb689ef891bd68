"""
Audit Trail
===========

Writes and reads the machine-readable artifacts of a run:
- <report_id>.letter.txt: the selected letter
- <report_id>.audit.json: config, reference codes, every trial's
  candidates/scores/feedback and the final selection
- <report_id>.zero_shot.json: the zero-shot baseline result

Artifacts are byte-identical for identical runs: keys sorted, fixed
indentation, no timestamps.
"""

from pathlib import Path
import json
from typing import Any, Dict, Optional

from letter_config import ARTIFACT_SCHEMA_VERSION
from reflexion_engine import PipelineResult, ZeroShotResult


class AuditTrailError(Exception):
    """Raised when an artifact cannot be written or read."""

    def __init__(self, message: str, path: Optional[Path] = None):
        self.message = message
        self.path = path
        super().__init__(f"{message}" + (f" ({path})" if path else ""))


def dumps_artifact(data: Dict[str, Any]) -> str:
    """Canonical JSON text for an artifact."""
    return json.dumps(
        {"schema_version": ARTIFACT_SCHEMA_VERSION, **data},
        indent=2,
        sort_keys=True,
        ensure_ascii=False,
    ) + "\n"


def write_json_artifact(path: Path, data: Dict[str, Any]) -> Path:
    """Write one artifact, creating parent directories."""
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps_artifact(data), encoding='utf-8')
    except OSError as e:
        raise AuditTrailError(f"Could not write artifact: {e}", path)
    return path


def load_json_artifact(path: Path) -> Dict[str, Any]:
    """
    Load an artifact written by this module.

    Raises:
        AuditTrailError: missing file, invalid JSON, or unknown schema
    """
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError:
        raise AuditTrailError("Artifact not found", path)
    except json.JSONDecodeError as e:
        raise AuditTrailError(f"Invalid JSON: {e}", path)

    if data.get("schema_version") != ARTIFACT_SCHEMA_VERSION:
        raise AuditTrailError(
            f"Unsupported schema_version {data.get('schema_version')!r}", path
        )
    return data


def audit_path(output_dir: Path, report_id: str) -> Path:
    return output_dir / f"{report_id}.audit.json"


def letter_path(output_dir: Path, report_id: str) -> Path:
    return output_dir / f"{report_id}.letter.txt"


def zero_shot_path(output_dir: Path, report_id: str) -> Path:
    return output_dir / f"{report_id}.zero_shot.json"


def save_pipeline_result(
    output_dir: Path,
    result: PipelineResult,
    extra: Optional[Dict[str, Any]] = None,
) -> Dict[str, Path]:
    """
    Write the letter and audit trail of a reflection run.

    extra is merged into the audit document (e.g. a FHIR push record
    or a failure description for partial results).
    """
    report_id = result.report.report_id
    data = result.to_dict()
    if extra:
        data.update(extra)

    letter_file = letter_path(output_dir, report_id)
    try:
        letter_file.parent.mkdir(parents=True, exist_ok=True)
        letter_file.write_text(result.best_letter.body + "\n", encoding='utf-8')
    except OSError as e:
        raise AuditTrailError(f"Could not write letter: {e}", letter_file)

    return {
        "letter": letter_file,
        "audit": write_json_artifact(audit_path(output_dir, report_id), data),
    }


def save_zero_shot_result(output_dir: Path, result: ZeroShotResult) -> Dict[str, Path]:
    """Write the zero-shot letter and its scored record."""
    report_id = result.report.report_id
    letter_file = output_dir / f"{report_id}.zero_shot.letter.txt"
    try:
        letter_file.parent.mkdir(parents=True, exist_ok=True)
        letter_file.write_text(result.letter.body + "\n", encoding='utf-8')
    except OSError as e:
        raise AuditTrailError(f"Could not write letter: {e}", letter_file)

    return {
        "letter": letter_file,
        "result": write_json_artifact(zero_shot_path(output_dir, report_id), result.to_dict()),
    }
