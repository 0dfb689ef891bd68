"""
Audit Trail Tests
=================

Tests for artifact writing, loading and the saved reflection record.
"""

import json

import pytest

from audit_trail import (
    AuditTrailError,
    audit_path,
    dumps_artifact,
    load_json_artifact,
    save_pipeline_result,
    write_json_artifact,
)
from letter_config import ARTIFACT_SCHEMA_VERSION
from providers import ScriptedProvider
from reflexion_engine import MedicalReport, ReflexionEngine

from tests.helpers import REPORT_TEXT, scenario_script


class TestArtifacts:
    """Tests for the JSON artifact helpers."""

    def test_canonical_text(self):
        """Keys are sorted and the schema version is stamped."""
        text = dumps_artifact({"b": 1, "a": 2})
        assert text.index('"a"') < text.index('"b"')
        assert json.loads(text)["schema_version"] == ARTIFACT_SCHEMA_VERSION
        assert text.endswith("\n")

    def test_round_trip(self, tmp_path):
        """Written artifacts load back."""
        path = write_json_artifact(tmp_path / "nested" / "x.json", {"value": 3})
        assert load_json_artifact(path)["value"] == 3

    def test_missing(self, tmp_path):
        """Loading a missing artifact raises."""
        with pytest.raises(AuditTrailError, match="not found"):
            load_json_artifact(tmp_path / "absent.json")

    def test_wrong_schema(self, tmp_path):
        """Artifacts from another schema version are rejected."""
        path = tmp_path / "old.json"
        path.write_text(json.dumps({"schema_version": "0.1"}), encoding="utf-8")
        with pytest.raises(AuditTrailError, match="schema_version"):
            load_json_artifact(path)


class TestSavePipelineResult:
    """Tests for the saved reflection record."""

    @pytest.mark.asyncio
    async def test_audit_contents(self, tmp_path, scenario_provider, registry):
        """The audit holds every trial, the memory and any extra fields."""
        result = await ReflexionEngine(scenario_provider, registry).run(MedicalReport(REPORT_TEXT, report_id="r1"))
        paths = save_pipeline_result(tmp_path, result, extra={"note": "kept"})

        assert paths["audit"] == audit_path(tmp_path, "r1")
        audit = load_json_artifact(paths["audit"])
        assert audit["note"] == "kept"
        assert len(audit["trials"]) == 2
        assert audit["memory"] == list(result.memory)
        assert audit["trials"][1]["candidates"][0]["score"]["accuracy"] == 1.0

    @pytest.mark.asyncio
    async def test_identical_runs_identical_bytes(self, tmp_path, registry):
        """Two runs of the same script write the same audit bytes."""
        for name in ("a", "b"):
            engine = ReflexionEngine(ScriptedProvider(scenario_script()), registry)
            result = await engine.run(MedicalReport(REPORT_TEXT, report_id="r1"))
            save_pipeline_result(tmp_path / name, result)
        assert audit_path(tmp_path / "a", "r1").read_bytes() == audit_path(tmp_path / "b", "r1").read_bytes()
