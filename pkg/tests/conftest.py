"""
Shared pytest fixtures.
"""

from pathlib import Path
from typing import List

import pytest

from icd10_registry import Registry, load_registry
from providers import ScriptedProvider

from tests.helpers import REGISTRY_TABLE, StubFhirServer, scenario_script, write_script


@pytest.fixture(scope="session")
def registry() -> Registry:
    """The ICD-10-CM subset the scenarios and corpus draw from."""
    return load_registry(REGISTRY_TABLE)


@pytest.fixture
def stub_fhir() -> StubFhirServer:
    return StubFhirServer()


@pytest.fixture
def scenario_provider() -> ScriptedProvider:
    return ScriptedProvider(scenario_script())


@pytest.fixture
def scenario_script_file(tmp_path: Path) -> Path:
    return write_script(tmp_path / "scenario.script.json", scenario_script())


class RecordingSleep:
    """Stand-in for asyncio.sleep that records delays instead of waiting."""

    def __init__(self):
        self.delays: List[float] = []

    async def __call__(self, seconds: float) -> None:
        self.delays.append(seconds)


@pytest.fixture
def no_sleep() -> RecordingSleep:
    return RecordingSleep()
