"""
Letter Scoring
==============

ICD-10 accuracy of a letter against its source report, combined with
readability into the weighted overall score.

Features:
- Accuracy as matched reference codes / total reference codes
- Classification of declared codes (matched, missing, invalid, extra)
- Description verification against the registry (recorded, not scored)
- overall_score = readability * 0.3 + accuracy * 0.7 by default
"""

from dataclasses import dataclass
from typing import AbstractSet, Any, Dict, FrozenSet, Iterable, Optional, Sequence, Tuple
import logging

from icd10_registry import (
    InvalidCodeError,
    Registry,
    descriptions_match,
    get_description,
    normalize_code,
    validate_code,
)
from letter_config import DEFAULT_ACCURACY_WEIGHT, DEFAULT_READABILITY_WEIGHT

logger = logging.getLogger(__name__)

WEIGHT_SUM_TOLERANCE = 1e-9


class ScoringError(Exception):
    """Raised for invalid weights or out-of-range score inputs."""

    def __init__(self, message: str, value: Optional[float] = None):
        self.message = message
        self.value = value
        super().__init__(message)


@dataclass(frozen=True)
class ScoreWeights:
    """Weights of the two score components; must sum to 1."""
    readability_weight: float = DEFAULT_READABILITY_WEIGHT
    accuracy_weight: float = DEFAULT_ACCURACY_WEIGHT

    def __post_init__(self):
        if self.readability_weight < 0 or self.accuracy_weight < 0:
            raise ScoringError(
                f"Weights must be >= 0 (readability={self.readability_weight}, "
                f"accuracy={self.accuracy_weight})"
            )
        total = self.readability_weight + self.accuracy_weight
        if abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise ScoringError(f"Weights must sum to 1, got {total}", value=total)

    def to_dict(self) -> Dict[str, float]:
        return {
            "readability_weight": self.readability_weight,
            "accuracy_weight": self.accuracy_weight,
        }


@dataclass(frozen=True)
class AccuracyBreakdown:
    """Result of comparing a letter's declared codes with the reference set."""
    fraction: float
    matched: FrozenSet[str]
    missing: FrozenSet[str]
    invalid: FrozenSet[str]
    extra: FrozenSet[str] = frozenset()


@dataclass(frozen=True)
class LetterScore:
    """
    Full score of one candidate letter.

    Attributes:
        accuracy: Fraction of reference codes the letter declares
        grade: Raw Flesch-Kincaid grade of the letter body
        readability: Standardized readability in [0, 1]
        overall: Weighted combination of readability and accuracy
        matched_codes: Reference codes the letter declares
        missing_codes: Reference codes the letter omits
        invalid_codes: Declared codes that fail normalization or the registry
        extra_codes: Valid declared codes absent from the reference set
        description_mismatches: Declared codes whose stated description
            differs from the registry description
    """
    accuracy: float
    grade: float
    readability: float
    overall: float
    matched_codes: FrozenSet[str] = frozenset()
    missing_codes: FrozenSet[str] = frozenset()
    invalid_codes: FrozenSet[str] = frozenset()
    extra_codes: FrozenSet[str] = frozenset()
    description_mismatches: FrozenSet[str] = frozenset()

    @property
    def is_perfect(self) -> bool:
        """Nothing left to correct: all codes right and grade on target."""
        return (
            self.accuracy == 1.0
            and self.readability == 1.0
            and not (self.missing_codes or self.invalid_codes)
            and not (self.extra_codes or self.description_mismatches)
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "grade": self.grade,
            "readability": self.readability,
            "overall": self.overall,
            "matched_codes": sorted(self.matched_codes),
            "missing_codes": sorted(self.missing_codes),
            "invalid_codes": sorted(self.invalid_codes),
            "extra_codes": sorted(self.extra_codes),
            "description_mismatches": sorted(self.description_mismatches),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LetterScore":
        return cls(
            accuracy=data["accuracy"],
            grade=data["grade"],
            readability=data["readability"],
            overall=data["overall"],
            matched_codes=frozenset(data.get("matched_codes", [])),
            missing_codes=frozenset(data.get("missing_codes", [])),
            invalid_codes=frozenset(data.get("invalid_codes", [])),
            extra_codes=frozenset(data.get("extra_codes", [])),
            description_mismatches=frozenset(data.get("description_mismatches", [])),
        )


def accuracy(
    original_codes: AbstractSet[str],
    letter_codes: Iterable[str],
    reg: Registry,
) -> AccuracyBreakdown:
    """
    Compare declared letter codes with the reference code set.

    Declared codes are normalized; anything failing normalization or the
    registry lands in `invalid` and is ignored. Duplicates count once.
    An empty reference set scores 1.0.
    """
    valid_declared = set()
    invalid = set()

    for raw in letter_codes:
        try:
            code = normalize_code(raw)
        except InvalidCodeError:
            invalid.add((raw or "").strip())
            continue
        if validate_code(reg, code):
            valid_declared.add(str(code))
        else:
            invalid.add(str(code))

    reference = {str(c) for c in original_codes}
    matched = reference & valid_declared
    missing = reference - valid_declared
    extra = valid_declared - reference

    if not reference:
        logger.debug("Empty reference code set; accuracy is vacuously 1.0")
        fraction = 1.0
    else:
        fraction = len(matched) / len(reference)

    return AccuracyBreakdown(
        fraction=fraction,
        matched=frozenset(matched),
        missing=frozenset(missing),
        invalid=frozenset(invalid),
        extra=frozenset(extra),
    )


def description_mismatches(
    declared: Sequence[Tuple[str, str]],
    reg: Registry,
) -> FrozenSet[str]:
    """
    Codes whose stated description differs from the registry description.

    Only registry-valid codes are checked.
    """
    mismatched = set()
    for raw, stated in declared:
        try:
            code = normalize_code(raw)
        except InvalidCodeError:
            continue
        if not validate_code(reg, code):
            continue
        if not descriptions_match(stated, get_description(reg, code)):
            mismatched.add(str(code))
    return frozenset(mismatched)


def _check_unit_interval(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ScoringError(f"{name} must be in [0, 1], got {value}", value=value)


def overall_score(
    readability: float,
    accuracy: float,
    w: Optional[ScoreWeights] = None,
) -> float:
    """
    Weighted sum of readability and accuracy.

    Raises:
        ScoringError: either input is outside [0, 1]
    """
    w = w or ScoreWeights()
    _check_unit_interval("readability", readability)
    _check_unit_interval("accuracy", accuracy)
    return w.readability_weight * readability + w.accuracy_weight * accuracy
