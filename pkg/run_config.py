"""
Run Configuration
=================

JSON run-config loading, validation and CLI overrides.

Config file layout (every section and key optional):

    {
      "registry_path": "codes/icd10cm_fy2024.tsv",
      "output_dir": "output",
      "engine": {
        "n_candidates": 5, "max_trials": 3, "early_stop": 0.99,
        "weights": {"readability": 0.3, "accuracy": 0.7},
        "target_grade": 6.0, "grade_span": 10.0,
        "llm_reflection": false, "concurrent_candidates": true
      },
      "gateway": {"backend": "scripted", "script_path": "r1.script.json"},
      "fhir": {"base_url": "https://fhir.example.org/r4", "timeout_seconds": 30}
    }

Relative paths resolve against the config file's directory. Without a
registry_path the full code set from simple-icd-10-cm is used.
"""

import argparse
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from fhir_bridge import FhirServerConfig
from letter_config import (
    DEFAULT_EARLY_STOP,
    DEFAULT_FHIR_AUTH_ENV,
    DEFAULT_FHIR_MAX_RETRIES,
    DEFAULT_FHIR_TIMEOUT_SECONDS,
    DEFAULT_GRADE_SPAN,
    DEFAULT_MAX_TRIALS,
    DEFAULT_N_CANDIDATES,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_TARGET_GRADE,
)
from providers import ConfigValidationError, GatewayConfig, parse_gateway_config, validate_gateway_config
from readability import ReadabilityConfig, ReadabilityError
from reflexion_engine import EngineConfig
from scoring import ScoreWeights, ScoringError

logger = logging.getLogger(__name__)

VALID_SECTIONS = {"registry_path", "output_dir", "engine", "gateway", "fhir"}
ENGINE_KEYS = {
    "n_candidates", "max_trials", "early_stop", "weights", "target_grade",
    "grade_span", "llm_reflection", "concurrent_candidates",
}
FHIR_KEYS = {"base_url", "timeout_seconds", "max_retries", "auth_env_var"}


@dataclass
class RunConfig:
    """Everything one CLI invocation needs."""
    engine: EngineConfig = field(default_factory=EngineConfig)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    registry_path: Optional[Path] = None
    fhir: Optional[FhirServerConfig] = None
    output_dir: Path = DEFAULT_OUTPUT_DIR

    def validate(self, require_script: bool = True) -> List[str]:
        """Cross-section checks; file-system checks included."""
        errors = list(self.gateway.validate(require_script))
        if self.gateway.backend == "scripted" and self.gateway.script_path is not None:
            if not Path(self.gateway.script_path).is_file():
                errors.append(f"gateway.script_path: file not found: {self.gateway.script_path}")
        if self.registry_path is not None and not Path(self.registry_path).is_file():
            errors.append(f"registry_path: file not found: {self.registry_path}")
        if self.fhir is not None:
            errors.extend(self.fhir.validate())
        if Path(self.output_dir).exists() and not Path(self.output_dir).is_dir():
            errors.append(f"output_dir: not a directory: {self.output_dir}")
        return errors

    def to_dict(self) -> Dict[str, Any]:
        engine = self.engine.to_dict()
        readability = engine.pop("readability")
        weights = engine.pop("weights")
        engine.update({
            "weights": {
                "readability": weights["readability_weight"],
                "accuracy": weights["accuracy_weight"],
            },
            "target_grade": readability["target_grade"],
            "grade_span": readability["span"],
        })
        data: Dict[str, Any] = {
            "registry_path": str(self.registry_path) if self.registry_path else None,
            "output_dir": str(self.output_dir),
            "engine": engine,
            "gateway": self.gateway.to_dict(),
        }
        if self.fhir is not None:
            data["fhir"] = self.fhir.to_dict()
        return data


# =============================================================================
# Validation
# =============================================================================

def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_count(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value >= 1


def _validate_engine(data: Any) -> List[str]:
    if not isinstance(data, dict):
        return ["'engine' must be an object"]

    errors = []
    for key in sorted(set(data) - ENGINE_KEYS):
        errors.append(f"engine.{key}: unknown key")

    for key in ("n_candidates", "max_trials"):
        if key in data and not _is_count(data[key]):
            errors.append(f"engine.{key}: must be a positive integer")
    if "early_stop" in data:
        if not _is_number(data["early_stop"]) or not 0 < data["early_stop"] <= 1:
            errors.append("engine.early_stop: must be a number in (0, 1]")
    for key in ("target_grade", "grade_span"):
        if key in data and (not _is_number(data[key]) or data[key] <= 0):
            errors.append(f"engine.{key}: must be a positive number")
    for key in ("llm_reflection", "concurrent_candidates"):
        if key in data and not isinstance(data[key], bool):
            errors.append(f"engine.{key}: must be true or false")

    if "weights" in data:
        weights = data["weights"]
        if not isinstance(weights, dict) or set(weights) != {"readability", "accuracy"}:
            errors.append("engine.weights: must be an object with 'readability' and 'accuracy'")
        elif not all(_is_number(v) and v >= 0 for v in weights.values()):
            errors.append("engine.weights: values must be non-negative numbers")
        elif abs(weights["readability"] + weights["accuracy"] - 1.0) > 1e-9:
            errors.append("engine.weights: readability + accuracy must equal 1")
    return errors


def _validate_fhir(data: Any) -> List[str]:
    if not isinstance(data, dict):
        return ["'fhir' must be an object"]

    errors = []
    for key in sorted(set(data) - FHIR_KEYS):
        errors.append(f"fhir.{key}: unknown key")
    if not isinstance(data.get("base_url"), str) or not data.get("base_url"):
        errors.append("fhir.base_url: required string")
    if "timeout_seconds" in data:
        if not _is_number(data["timeout_seconds"]) or data["timeout_seconds"] <= 0:
            errors.append("fhir.timeout_seconds: must be a positive number")
    if "max_retries" in data:
        value = data["max_retries"]
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            errors.append("fhir.max_retries: must be a non-negative integer")
    return errors


def validate_run_config(data: Any) -> List[str]:
    """
    Validate a raw run-config document.

    Returns:
        List of validation error messages (empty if valid)
    """
    if not isinstance(data, dict):
        return ["Config root must be an object"]

    errors = []
    for key in sorted(set(data) - VALID_SECTIONS):
        errors.append(f"{key}: unknown section")

    if data.get("registry_path") is not None and not isinstance(data["registry_path"], str):
        errors.append("registry_path: must be a string or null")
    if "output_dir" in data and not isinstance(data["output_dir"], str):
        errors.append("output_dir: must be a string")

    if "engine" in data:
        errors.extend(_validate_engine(data["engine"]))
    if "gateway" in data:
        errors.extend(validate_gateway_config(data["gateway"]))
    if "fhir" in data and data["fhir"] is not None:
        errors.extend(_validate_fhir(data["fhir"]))
    return errors


# =============================================================================
# Parsing
# =============================================================================

def _resolve(value: Optional[str], base_dir: Optional[Path], default: Optional[Path]) -> Optional[Path]:
    if value is None:
        return default
    path = Path(value)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    return path


def _parse_engine(data: Dict[str, Any]) -> EngineConfig:
    weights = data.get("weights")
    return EngineConfig(
        n_candidates=data.get("n_candidates", DEFAULT_N_CANDIDATES),
        max_trials=data.get("max_trials", DEFAULT_MAX_TRIALS),
        early_stop=float(data.get("early_stop", DEFAULT_EARLY_STOP)),
        weights=ScoreWeights(weights["readability"], weights["accuracy"]) if weights else ScoreWeights(),
        readability_cfg=ReadabilityConfig(
            target_grade=float(data.get("target_grade", DEFAULT_TARGET_GRADE)),
            span=float(data.get("grade_span", DEFAULT_GRADE_SPAN)),
        ),
        llm_reflection=data.get("llm_reflection", False),
        concurrent_candidates=data.get("concurrent_candidates", True),
    )


def _parse_fhir(data: Dict[str, Any]) -> FhirServerConfig:
    return FhirServerConfig(
        base_url=data["base_url"],
        timeout_seconds=float(data.get("timeout_seconds", DEFAULT_FHIR_TIMEOUT_SECONDS)),
        max_retries=data.get("max_retries", DEFAULT_FHIR_MAX_RETRIES),
        auth_env_var=data.get("auth_env_var", DEFAULT_FHIR_AUTH_ENV),
    )


def parse_run_config(data: Dict[str, Any], base_dir: Optional[Path] = None) -> RunConfig:
    """
    Build a RunConfig from a raw document.

    Raises:
        ConfigValidationError: the document fails validation
    """
    errors = validate_run_config(data)
    if errors:
        raise ConfigValidationError(errors)

    try:
        engine = _parse_engine(data.get("engine") or {})
    except (ReadabilityError, ScoringError) as e:
        raise ConfigValidationError([f"engine: {e}"])

    fhir_data = data.get("fhir")
    return RunConfig(
        engine=engine,
        gateway=parse_gateway_config(data.get("gateway") or {}, base_dir),
        registry_path=_resolve(data.get("registry_path"), base_dir, None),
        fhir=_parse_fhir(fhir_data) if fhir_data else None,
        output_dir=_resolve(data.get("output_dir"), base_dir, DEFAULT_OUTPUT_DIR),
    )


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """
    Load and validate a JSON config file.

    Raises:
        ConfigValidationError: missing file, invalid JSON, or invalid content
    """
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigValidationError([f"Config file not found: {path}"])
    except json.JSONDecodeError as e:
        raise ConfigValidationError([f"Invalid JSON in {path}: {e}"])

    logger.debug(f"Loaded run config from {path}")
    return parse_run_config(data, base_dir=path.parent)


# Written next to the artifacts of every reflect and eval run
RUN_CONFIG_NAME = "run_config.json"


def save_run_config(path: Union[str, Path], config: RunConfig) -> Path:
    """Write a config back out in the file format load_run_config reads."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


# =============================================================================
# CLI overrides
# =============================================================================

def parse_weights(text: str) -> ScoreWeights:
    """
    Parse "--weights r,a".

    Raises:
        ConfigValidationError: not two numbers, or they do not sum to 1
    """
    parts = [p.strip() for p in (text or "").split(",")]
    try:
        readability_weight, accuracy_weight = (float(p) for p in parts)
    except ValueError:
        raise ConfigValidationError([f"--weights: expected 'r,a', got '{text}'"])
    try:
        return ScoreWeights(readability_weight, accuracy_weight)
    except ScoringError as e:
        raise ConfigValidationError([f"--weights: {e}"])


def apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    """
    Return a copy of config with any CLI flags that were given applied.

    Raises:
        ConfigValidationError: an override produces an invalid config
    """
    def arg(name: str) -> Any:
        return getattr(args, name, None)

    gateway = config.gateway
    if arg("backend"):
        gateway = dataclasses.replace(gateway, backend=arg("backend"))
    if arg("script"):
        gateway = dataclasses.replace(gateway, script_path=Path(arg("script")))
        if not arg("backend"):
            gateway = dataclasses.replace(gateway, backend="scripted")

    engine_changes: Dict[str, Any] = {}
    if arg("n_candidates") is not None:
        engine_changes["n_candidates"] = arg("n_candidates")
    if arg("max_trials") is not None:
        engine_changes["max_trials"] = arg("max_trials")
    if arg("weights"):
        engine_changes["weights"] = parse_weights(arg("weights"))
    if arg("llm_reflection"):
        engine_changes["llm_reflection"] = True
    try:
        if arg("target_grade") is not None:
            engine_changes["readability_cfg"] = ReadabilityConfig(
                target_grade=arg("target_grade"), span=config.engine.readability_cfg.span
            )
        engine = dataclasses.replace(config.engine, **engine_changes)
    except ReadabilityError as e:
        raise ConfigValidationError([f"--target-grade: {e}"])

    fhir = config.fhir
    if arg("fhir_url"):
        fhir = (dataclasses.replace(fhir, base_url=arg("fhir_url")) if fhir
                else FhirServerConfig(base_url=arg("fhir_url")))

    return dataclasses.replace(
        config,
        engine=engine,
        gateway=gateway,
        registry_path=Path(arg("registry")) if arg("registry") else config.registry_path,
        fhir=fhir,
        output_dir=Path(arg("output_dir")) if arg("output_dir") else config.output_dir,
    )
