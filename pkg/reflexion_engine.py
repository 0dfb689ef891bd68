"""
Reflexion Engine
================

Multi-agent patient-letter loop:

1. Extract reference ICD-10 codes from the report (one call, temperature 0)
2. Generate N candidate letters (concurrently) from the generation template
3. Score every candidate for code accuracy and readability
4. Turn the best candidate's score breakdown into verbal feedback
5. Carry all feedback into the next trial's prompt; stop early on a
   near-perfect score or after max_trials

The engine returns the best letter across all trials with a full record
of every trial for the audit trail.
"""

import asyncio
import logging
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Optional, Tuple, Union

from icd10_registry import (
    InvalidCodeError,
    Registry,
    UnknownCodeError,
    descriptions_match,
    get_description,
    normalize_code,
    validate_code,
)
from letter_config import (
    DEFAULT_EARLY_STOP,
    DEFAULT_MAX_TRIALS,
    DEFAULT_N_CANDIDATES,
    EXTRACTION_TEMPERATURE,
    TEMPLATE_EXTRACT,
    TEMPLATE_GENERATE,
    TEMPLATE_SELF_REFLECTION,
    TEMPLATE_SYSTEM,
)
from letter_parser import DeclaredCode, ParseError, parse_code_list, parse_generation
from logging_system import StructuredLogger
from prompts import TemplateError, load_template, render
from providers import (
    BaseProvider,
    ConfigValidationError,
    GatewayConfig,
    LlmRequest,
    ProviderError,
    build_messages,
)
from readability import ReadabilityConfig, ReadabilityError, grade_of, readability_score
from scoring import (
    LetterScore,
    ScoreWeights,
    ScoringError,
    accuracy,
    description_mismatches,
    overall_score,
)

logger = logging.getLogger(__name__)

NO_CORRECTIONS_FEEDBACK = (
    "No corrections needed: every ICD-10 code from the report is listed "
    "correctly and the reading level is on target."
)

# Rendered into the generation prompt when the memory is empty
EMPTY_MEMORY_TEXT = "(none)"


# ============================================================================
# Report Types
# ============================================================================

class ReportSourceKind(Enum):
    """Where a report's text came from."""
    INLINE = "inline"
    FILE = "file"
    FHIR = "fhir"


@dataclass(frozen=True)
class ReportSource:
    """Provenance of a MedicalReport."""
    kind: ReportSourceKind = ReportSourceKind.INLINE
    path: Optional[str] = None
    report_id: Optional[str] = None
    server: Optional[str] = None
    patient_ref: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind.value}
        for key in ("path", "report_id", "server", "patient_ref"):
            value = getattr(self, key)
            if value is not None:
                data[key] = value
        return data


# Acronyms match case-sensitively; spelled-out names match in any case
MODALITY_PATTERNS: Dict[str, "re.Pattern[str]"] = {
    "CT": re.compile(r"\bCT\b|(?i:computed tomography)"),
    "MR": re.compile(r"\bMRI?\b|\bMRA\b|(?i:magnetic resonance)"),
    "US": re.compile(r"\bUS\b|(?i:ultrasound|sonograph\w*)"),
}


def detect_modality(text: str) -> Optional[str]:
    """Imaging modality (CT / MR / US) named earliest in the text, if any."""
    earliest: Optional[Tuple[int, str]] = None
    for modality, pattern in MODALITY_PATTERNS.items():
        match = pattern.search(text or "")
        if match and (earliest is None or match.start() < earliest[0]):
            earliest = (match.start(), modality)
    return earliest[1] if earliest else None


@dataclass(frozen=True)
class MedicalReport:
    """Source clinical text plus provenance."""
    body: str
    source: ReportSource = field(default_factory=ReportSource)
    modality_hint: Optional[str] = None
    report_id: str = "inline"

    def __post_init__(self):
        if not self.body or not self.body.strip():
            raise PipelineError("Report body is empty", stage="input")
        if self.modality_hint is None:
            object.__setattr__(self, "modality_hint", detect_modality(self.body))

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "MedicalReport":
        path = Path(path)
        try:
            body = path.read_text(encoding="utf-8")
        except OSError as e:
            raise PipelineError(f"Cannot read report {path}: {e}", stage="input")
        return cls(
            body=body,
            source=ReportSource(kind=ReportSourceKind.FILE, path=str(path)),
            report_id=path.stem,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "report_id": self.report_id,
            "source": self.source.to_dict(),
            "modality_hint": self.modality_hint,
        }


# ============================================================================
# Engine Types
# ============================================================================

@dataclass(frozen=True)
class EngineConfig:
    """
    Reflection loop settings.

    Attributes:
        n_candidates: Letters generated per trial
        max_trials: Upper bound on trials
        early_stop: Stop once the best overall score reaches this value
        weights: Readability/accuracy weights
        readability_cfg: Target grade and span
        llm_reflection: Rewrite composed feedback through the
            self_reflection template before storing it
        concurrent_candidates: Request a trial's candidates concurrently
    """
    n_candidates: int = DEFAULT_N_CANDIDATES
    max_trials: int = DEFAULT_MAX_TRIALS
    early_stop: float = DEFAULT_EARLY_STOP
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    readability_cfg: ReadabilityConfig = field(default_factory=ReadabilityConfig)
    llm_reflection: bool = False
    concurrent_candidates: bool = True

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ConfigValidationError(errors)

    def validate(self) -> List[str]:
        errors = []
        if not isinstance(self.n_candidates, int) or self.n_candidates < 1:
            errors.append(f"engine.n_candidates: must be >= 1, got {self.n_candidates}")
        if not isinstance(self.max_trials, int) or self.max_trials < 1:
            errors.append(f"engine.max_trials: must be >= 1, got {self.max_trials}")
        if not 0 < self.early_stop <= 1:
            errors.append(f"engine.early_stop: must be in (0, 1], got {self.early_stop}")
        return errors

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_candidates": self.n_candidates,
            "max_trials": self.max_trials,
            "early_stop": self.early_stop,
            "weights": self.weights.to_dict(),
            "readability": self.readability_cfg.to_dict(),
            "llm_reflection": self.llm_reflection,
            "concurrent_candidates": self.concurrent_candidates,
        }


@dataclass(frozen=True)
class CandidateLetter:
    """One generated letter plus the codes it declares."""
    body: str
    declared_codes: Tuple[DeclaredCode, ...]
    trial_index: int
    candidate_index: int
    has_code_block: bool = True

    def __post_init__(self):
        if not self.body or not self.body.strip():
            raise PipelineError("Candidate letter body is empty", stage="generation",
                                trial_index=self.trial_index)

    @property
    def code_texts(self) -> List[str]:
        return [c.raw_code for c in self.declared_codes]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "trial_index": self.trial_index,
            "candidate_index": self.candidate_index,
            "body": self.body,
            "declared_codes": [c.to_dict() for c in self.declared_codes],
            "has_code_block": self.has_code_block,
        }


@dataclass(frozen=True)
class TrialRecord:
    """
    Everything produced in one trial.

    feedback is the composed critique of this trial's best candidate and
    reflection the text stored in memory (equal unless the LLM rewrite is
    enabled). Both are None for the final trial.
    """
    trial_index: int
    prompt: str
    candidates: Tuple[CandidateLetter, ...]
    scores: Tuple[LetterScore, ...]
    best_index: int
    best_so_far: float
    feedback: Optional[str] = None
    reflection: Optional[str] = None

    @property
    def best_score(self) -> LetterScore:
        return self.scores[self.best_index]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "trial_index": self.trial_index,
            "prompt": self.prompt,
            "candidates": [
                {**c.to_dict(), "score": s.to_dict()}
                for c, s in zip(self.candidates, self.scores)
            ],
            "best_index": self.best_index,
            "best_so_far": self.best_so_far,
            "feedback": self.feedback,
            "reflection": self.reflection,
        }


class ReflectionMemory:
    """Append-only feedback history bounded to max_trials - 1 entries."""

    def __init__(self, max_entries: int):
        self.max_entries = max_entries
        self._entries: List[str] = []

    @property
    def entries(self) -> Tuple[str, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def append(self, entry: str) -> None:
        if len(self._entries) >= self.max_entries:
            raise PipelineError(
                f"Reflection memory is full ({self.max_entries} entries)", stage="reflection"
            )
        self._entries.append(entry)

    def render(self) -> str:
        """Entries in order, each verbatim under an attempt label."""
        if not self._entries:
            return EMPTY_MEMORY_TEXT
        return "\n\n".join(
            f"Attempt {i + 1} feedback:\n{entry}" for i, entry in enumerate(self._entries)
        )


class StopReason(Enum):
    """Why a run ended."""
    EARLY_STOP = "early_stop"
    MAX_TRIALS = "max_trials"
    ABORTED = "aborted"  # partial results attached to a PipelineError


@dataclass
class PipelineResult:
    """Best letter across all trials plus the full trial history."""
    report: MedicalReport
    config: EngineConfig
    reference_codes: FrozenSet[str]
    reference_descriptions: Dict[str, str]
    best_letter: CandidateLetter
    best_score: LetterScore
    trials: List[TrialRecord]
    stopped_reason: StopReason
    memory: Tuple[str, ...] = ()
    extraction_calls: int = 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            "report": self.report.to_dict(),
            "config": self.config.to_dict(),
            "extraction_calls": self.extraction_calls,
            "reference_codes": [
                {"code": code, "description": self.reference_descriptions.get(code, "")}
                for code in sorted(self.reference_codes)
            ],
            "trials": [t.to_dict() for t in self.trials],
            "memory": list(self.memory),
            "stopped_reason": self.stopped_reason.value,
            "best": {
                "trial_index": self.best_letter.trial_index,
                "candidate_index": self.best_letter.candidate_index,
                "body": self.best_letter.body,
                "score": self.best_score.to_dict(),
            },
        }


@dataclass
class ZeroShotResult:
    """Single-prompt baseline: one candidate, no memory, no reflection."""
    report: MedicalReport
    reference_codes: FrozenSet[str]
    letter: CandidateLetter
    score: LetterScore
    prompt: str

    def to_dict(self) -> Dict[str, Any]:
        return {
            "report": self.report.to_dict(),
            "reference_codes": sorted(self.reference_codes),
            "prompt": self.prompt,
            "letter": self.letter.to_dict(),
            "score": self.score.to_dict(),
        }


class PipelineError(Exception):
    """
    Raised when a run cannot complete.

    Attributes:
        stage: input, extraction, generation, scoring or reflection
        trial_index: Trial in which the failure happened (None before trials)
        partial: PipelineResult of completed trials, when any completed
    """

    def __init__(
        self,
        message: str,
        stage: str,
        trial_index: Optional[int] = None,
        partial: Optional[PipelineResult] = None,
    ):
        self.message = message
        self.stage = stage
        self.trial_index = trial_index
        self.partial = partial
        where = f"{stage}" + (f", trial {trial_index}" if trial_index is not None else "")
        super().__init__(f"[{where}] {message}")


# ============================================================================
# Pure Steps
# ============================================================================

def score_candidate(
    letter: CandidateLetter,
    reference_codes: FrozenSet[str],
    reg: Registry,
    cfg: EngineConfig,
) -> LetterScore:
    """
    Score one letter: code accuracy, FKGL grade, standardized readability
    and the weighted overall score.

    Raises:
        ReadabilityError: the letter body has no measurable text
    """
    breakdown = accuracy(reference_codes, letter.code_texts, reg)
    grade = grade_of(letter.body)
    readability = readability_score(grade, cfg.readability_cfg)
    mismatched = description_mismatches(
        [(c.raw_code, c.description) for c in letter.declared_codes], reg
    )
    return LetterScore(
        accuracy=breakdown.fraction,
        grade=grade,
        readability=readability,
        overall=overall_score(readability, breakdown.fraction, cfg.weights),
        matched_codes=breakdown.matched,
        missing_codes=breakdown.missing,
        invalid_codes=breakdown.invalid,
        extra_codes=breakdown.extra,
        description_mismatches=mismatched,
    )


def _describe(reg: Registry, code: str) -> str:
    try:
        return get_description(reg, code)
    except UnknownCodeError:
        return ""


def compose_feedback(best: LetterScore, cfg: EngineConfig, reg: Registry) -> str:
    """
    Verbal critique of a scored letter.

    Deterministic: the same LetterScore always yields the same text.
    """
    if best.is_perfect:
        return NO_CORRECTIONS_FEEDBACK

    target = cfg.readability_cfg.target_grade
    lines = [
        f"Overall score: {best.overall:.4f} "
        f"(accuracy {best.accuracy:.2f}, readability {best.readability:.2f})."
    ]

    if best.missing_codes:
        lines.append(
            "Missing ICD-10 codes. Describe these findings in plain words and list each code:"
        )
        lines.extend(f"- {code} | {_describe(reg, code)}" for code in sorted(best.missing_codes))

    if best.invalid_codes:
        lines.append("Invalid ICD-10 codes (not in the ICD-10-CM registry). Remove or correct them:")
        lines.extend(f"- {code}" for code in sorted(best.invalid_codes))

    if best.description_mismatches:
        lines.append("Codes listed with a non-official description. Use the official wording:")
        lines.extend(
            f"- {code} | {_describe(reg, code)}" for code in sorted(best.description_mismatches)
        )

    if best.extra_codes:
        lines.append("Codes listed that the report does not support. Check that each belongs:")
        lines.extend(f"- {code}" for code in sorted(best.extra_codes))

    delta = best.grade - target
    if best.readability == 1.0:
        lines.append(f"Reading level: grade {best.grade:.2f}, target {target:.1f}, on target.")
    elif delta > 0:
        lines.append(
            f"Reading level: grade {best.grade:.2f}, target {target:.1f} ({delta:+.2f}). "
            "Shorten sentences and use simpler words."
        )
    else:
        lines.append(
            f"Reading level: grade {best.grade:.2f}, target {target:.1f} ({delta:+.2f}). "
            "The letter reads below the target level. Keep plain words but write "
            "complete, professional sentences."
        )

    return "\n".join(lines)


def select_best_index(scores: List[LetterScore]) -> int:
    """Index of the highest overall score; lowest index wins ties."""
    return max(range(len(scores)), key=lambda i: scores[i].overall)


# ============================================================================
# Engine
# ============================================================================

class ReflexionEngine:
    """
    Runs extraction, candidate generation and the reflection loop against
    one LLM backend.

    Usage:
        engine = ReflexionEngine(provider, registry, EngineConfig(n_candidates=5))
        result = await engine.run(MedicalReport.from_file("report.txt"))
        print(result.best_letter.body)
    """

    def __init__(
        self,
        provider: BaseProvider,
        registry: Registry,
        config: Optional[EngineConfig] = None,
        gateway: Optional[GatewayConfig] = None,
        events: Optional[StructuredLogger] = None,
    ):
        self.provider = provider
        self.registry = registry
        self.config = config or EngineConfig()
        self.gateway = gateway or GatewayConfig()
        self.events = events

    # ------------------------------------------------------------------
    # LLM plumbing
    # ------------------------------------------------------------------

    async def _complete(
        self,
        template_name: str,
        user_prompt: str,
        temperature: float,
        trial_index: int,
        candidate_index: Optional[int] = None,
    ) -> str:
        request = LlmRequest(
            messages=build_messages(load_template(TEMPLATE_SYSTEM).body, user_prompt),
            temperature=temperature,
            model_id=self.gateway.model_id,
            max_output=self.gateway.max_output_tokens,
            template_name=template_name,
            trial_index=trial_index,
            candidate_index=candidate_index,
        )
        start = time.monotonic()
        text = await self.provider.complete(request)
        if self.events:
            self.events.log_llm_call(
                request.key, template_name, (time.monotonic() - start) * 1000,
                temperature=temperature,
            )
        return text

    # ------------------------------------------------------------------
    # Extraction
    # ------------------------------------------------------------------

    async def extract_codes_with_descriptions(self, report: MedicalReport) -> Dict[str, str]:
        """
        Reference codes mapped to their registry descriptions.

        Raises:
            PipelineError: LLM failure, zero parseable lines, or every
                code invalid
        """
        try:
            prompt = render(load_template(TEMPLATE_EXTRACT), {"report": report.body})
            raw = await self._complete(TEMPLATE_EXTRACT, prompt, EXTRACTION_TEMPERATURE, 0)
            declared = parse_code_list(raw)
        except (ProviderError, ParseError, TemplateError) as e:
            raise PipelineError(str(e), stage="extraction") from e

        codes: Dict[str, str] = {}
        dropped: List[str] = []
        for item in declared:
            try:
                code = normalize_code(item.raw_code)
            except InvalidCodeError:
                logger.warning(f"{report.report_id}: dropping malformed code {item.raw_code!r}")
                dropped.append(item.raw_code)
                continue
            if not validate_code(self.registry, code):
                logger.warning(f"{report.report_id}: dropping unknown code {code}")
                dropped.append(str(code))
                continue

            official = get_description(self.registry, code)
            if not descriptions_match(item.description, official):
                logger.info(
                    f"{report.report_id}: {code} described as {item.description!r}, "
                    f"registry says {official!r}"
                )
            codes[str(code)] = official

        if self.events:
            self.events.log_codes_extracted(codes.keys(), dropped)

        if not codes:
            raise PipelineError(
                f"All {len(declared)} extracted codes are invalid", stage="extraction"
            )
        return codes

    async def extract_reference_codes(self, report: MedicalReport) -> FrozenSet[str]:
        """Validated reference code set for the report."""
        return frozenset(await self.extract_codes_with_descriptions(report))

    # ------------------------------------------------------------------
    # Generation
    # ------------------------------------------------------------------

    def render_generation_prompt(self, report: MedicalReport, memory: ReflectionMemory) -> str:
        return render(
            load_template(TEMPLATE_GENERATE),
            {
                "report": report.body,
                "target_grade": f"{self.config.readability_cfg.target_grade:.1f}",
                "reflections": memory.render(),
            },
        )

    async def generate_candidates(
        self,
        report: MedicalReport,
        memory: ReflectionMemory,
        trial_index: int = 0,
        n_candidates: Optional[int] = None,
    ) -> List[CandidateLetter]:
        """
        Request and parse n_candidates letters from one rendered prompt.

        Raises:
            PipelineError: any completion or parse fails
        """
        n = n_candidates or self.config.n_candidates
        prompt = self.render_generation_prompt(report, memory)
        temperature = self.gateway.generation_temperature

        calls = [
            self._complete(TEMPLATE_GENERATE, prompt, temperature, trial_index, i)
            for i in range(n)
        ]
        if self.config.concurrent_candidates:
            outputs = await asyncio.gather(*calls, return_exceptions=True)
        else:
            outputs = []
            for call in calls:
                try:
                    outputs.append(await call)
                except Exception as e:
                    outputs.append(e)

        candidates = []
        for i, output in enumerate(outputs):
            if isinstance(output, BaseException):
                if not isinstance(output, ProviderError):
                    raise output
                raise PipelineError(
                    f"candidate {i}: {output}", stage="generation", trial_index=trial_index
                ) from output
            try:
                parsed = parse_generation(output)
            except ParseError as e:
                raise PipelineError(
                    f"candidate {i}: {e}", stage="generation", trial_index=trial_index
                ) from e
            candidates.append(CandidateLetter(
                body=parsed.letter_body,
                declared_codes=parsed.declared_codes,
                trial_index=trial_index,
                candidate_index=i,
                has_code_block=parsed.has_delimiter,
            ))
        return candidates

    def _score_all(self, candidates: List[CandidateLetter], reference: FrozenSet[str],
                   trial_index: int) -> List[LetterScore]:
        try:
            return [
                score_candidate(c, reference, self.registry, self.config) for c in candidates
            ]
        except (ReadabilityError, ScoringError) as e:
            raise PipelineError(str(e), stage="scoring", trial_index=trial_index) from e

    async def _self_reflect(self, feedback: str, letter: CandidateLetter, trial_index: int) -> str:
        prompt = render(
            load_template(TEMPLATE_SELF_REFLECTION),
            {"feedback": feedback, "letter": letter.body},
        )
        try:
            text = await self._complete(
                TEMPLATE_SELF_REFLECTION, prompt, EXTRACTION_TEMPERATURE, trial_index
            )
        except ProviderError as e:
            raise PipelineError(str(e), stage="reflection", trial_index=trial_index) from e
        return text.strip()

    # ------------------------------------------------------------------
    # Loop
    # ------------------------------------------------------------------

    async def run(self, report: MedicalReport) -> PipelineResult:
        """
        Full reflection loop.

        Raises:
            PipelineError: tagged with stage and trial; carries the partial
                result when at least one trial completed
        """
        cfg = self.config
        reference_map = await self.extract_codes_with_descriptions(report)
        reference = frozenset(reference_map)

        memory = ReflectionMemory(max_entries=cfg.max_trials - 1)
        trials: List[TrialRecord] = []
        best: Optional[Tuple[CandidateLetter, LetterScore]] = None

        def build_result(reason: StopReason) -> PipelineResult:
            return PipelineResult(
                report=report,
                config=cfg,
                reference_codes=reference,
                reference_descriptions=reference_map,
                best_letter=best[0],
                best_score=best[1],
                trials=list(trials),
                stopped_reason=reason,
                memory=memory.entries,
            )

        for trial_index in range(cfg.max_trials):
            try:
                prompt = self.render_generation_prompt(report, memory)
                candidates = await self.generate_candidates(report, memory, trial_index)
                scores = self._score_all(candidates, reference, trial_index)
            except PipelineError as e:
                if trials:
                    e.partial = build_result(StopReason.ABORTED)
                raise

            best_index = select_best_index(scores)
            if best is None or scores[best_index].overall > best[1].overall:
                best = (candidates[best_index], scores[best_index])

            stop_reason = None
            if best[1].overall >= cfg.early_stop:
                stop_reason = StopReason.EARLY_STOP
            elif trial_index == cfg.max_trials - 1:
                stop_reason = StopReason.MAX_TRIALS

            feedback = reflection = None
            if stop_reason is None:
                feedback = compose_feedback(scores[best_index], cfg, self.registry)
                reflection = feedback
                if cfg.llm_reflection:
                    try:
                        reflection = await self._self_reflect(
                            feedback, candidates[best_index], trial_index
                        )
                    except PipelineError as e:
                        e.partial = build_result(StopReason.ABORTED)
                        raise
                memory.append(reflection)
                if self.events:
                    self.events.log_feedback(trial_index, reflection)

            trials.append(TrialRecord(
                trial_index=trial_index,
                prompt=prompt,
                candidates=tuple(candidates),
                scores=tuple(scores),
                best_index=best_index,
                best_so_far=best[1].overall,
                feedback=feedback,
                reflection=reflection,
            ))
            if self.events:
                self.events.log_trial(
                    trial_index, best_index, scores[best_index].overall, best[1].overall
                )
            logger.debug(
                f"{report.report_id} trial {trial_index}: best {best_index} "
                f"({scores[best_index].overall:.4f})"
            )

            if stop_reason is not None:
                return build_result(stop_reason)

        # max_trials >= 1 guarantees a return inside the loop
        raise PipelineError("Loop ended without a result", stage="generation")

    async def run_zero_shot(
        self,
        report: MedicalReport,
        reference_codes: Optional[FrozenSet[str]] = None,
    ) -> ZeroShotResult:
        """
        Baseline: the same generation prompt, one candidate, no memory.

        Raises:
            PipelineError: extraction, generation or scoring failure
        """
        reference = reference_codes
        if reference is None:
            reference = await self.extract_reference_codes(report)

        memory = ReflectionMemory(max_entries=0)
        prompt = self.render_generation_prompt(report, memory)
        candidates = await self.generate_candidates(report, memory, trial_index=0, n_candidates=1)
        score = self._score_all(candidates, reference, 0)[0]
        return ZeroShotResult(
            report=report,
            reference_codes=reference,
            letter=candidates[0],
            score=score,
            prompt=prompt,
        )
