"""
Patient Letter Configuration
============================

Configuration constants for the patient-letter pipeline.
These values are the defaults behind the config file and the CLI flags.
"""

from pathlib import Path

# ============================================================================
# ICD-10 Registry
# ============================================================================

# Distribution that ships the full ICD-10-CM code set (used when no table file is given)
ICD10_PACKAGE = "simple-icd-10-cm"

# Comment line in the table that names the release it was taken from
SOURCE_VERSION_PREFIX = "# source_version:"

# ============================================================================
# LLM Gateway
# ============================================================================

# Model used for the published comparison runs
DEFAULT_MODEL_ID = "gpt-4o-2024-05-13"

# Chat-completions endpoint for the live backend
DEFAULT_LLM_ENDPOINT = "https://api.openai.com/v1/chat/completions"

# Environment variable holding the bearer token for the live backend
DEFAULT_LLM_AUTH_ENV = "OPENAI_API_KEY"

# Per-request timeout and retry budget for the live backend
DEFAULT_LLM_TIMEOUT_SECONDS = 60.0
DEFAULT_LLM_MAX_RETRIES = 3
DEFAULT_MAX_OUTPUT_TOKENS = 1500

# Extraction runs at temperature 0; generation may sample
EXTRACTION_TEMPERATURE = 0.0
DEFAULT_GENERATION_TEMPERATURE = 0.7

# Structured output contract imposed by the prompt templates
CODES_DELIMITER = "=== ICD-10 CODES ==="

# Template names (files under prompts/)
TEMPLATE_SYSTEM = "system_prompt"
TEMPLATE_EXTRACT = "extract_codes"
TEMPLATE_GENERATE = "generate_letter"
TEMPLATE_SELF_REFLECTION = "self_reflection"

# ============================================================================
# Reflection Engine
# ============================================================================

DEFAULT_N_CANDIDATES = 5
DEFAULT_MAX_TRIALS = 3

# Stop early once the best overall score reaches this value
DEFAULT_EARLY_STOP = 0.99

# overall_score = (readability * 0.3) + (accuracy * 0.7)
DEFAULT_READABILITY_WEIGHT = 0.3
DEFAULT_ACCURACY_WEIGHT = 0.7

# Recommended reading level for patient-facing material, and the grade
# distance at which the readability score reaches 0
DEFAULT_TARGET_GRADE = 6.0
DEFAULT_GRADE_SPAN = 10.0

# ============================================================================
# FHIR Bridge
# ============================================================================

DEFAULT_FHIR_AUTH_ENV = "FHIR_AUTH_TOKEN"
DEFAULT_FHIR_TIMEOUT_SECONDS = 30.0
DEFAULT_FHIR_MAX_RETRIES = 2

# Extension carrying the overall score on pushed letters
SCORE_EXTENSION_URL = "urn:patient-letter:overall-score"

# ============================================================================
# CLI Harness
# ============================================================================

DEFAULT_OUTPUT_DIR = Path("output")

# Corpus layout: <report_id>.txt with a companion <report_id>.script.json
CORPUS_REPORT_SUFFIX = ".txt"
CORPUS_SCRIPT_SUFFIX = ".script.json"

# Reports processed concurrently by the eval command
DEFAULT_EVAL_CONCURRENCY = 4

# Version tag written into every machine-readable artifact
ARTIFACT_SCHEMA_VERSION = "1.0"
