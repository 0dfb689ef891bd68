"""
Readability Metrics
===================

Sentence/word/syllable counting and the Flesch-Kincaid Grade Level,
standardized into a [0, 1] readability score anchored at a target grade.

Features:
- Sentence segmentation with an abbreviation list
- Vowel-group syllable heuristic (silent-e and "-le" rules)
- FKGL = 0.39 * (words / sentences) + 11.8 * (syllables / words) - 15.59
- Clamped linear standardization around the target grade
- Reference grade from textstat for cross-checking the heuristic
"""

from dataclasses import dataclass
from typing import Dict, List, Optional
import logging
import re

from letter_config import DEFAULT_GRADE_SPAN, DEFAULT_TARGET_GRADE

logger = logging.getLogger(__name__)

# Kincaid et al. standard coefficients
FKGL_SENTENCE_WEIGHT = 0.39
FKGL_SYLLABLE_WEIGHT = 11.8
FKGL_INTERCEPT = 15.59

# Abbreviations (lowercase, with their trailing period) that never end a sentence
ABBREVIATIONS = frozenset({
    "dr.", "mr.", "mrs.", "ms.", "prof.", "sr.", "jr.", "st.",
    "vs.", "e.g.", "i.e.", "approx.", "fig.", "etc.",
})

# Terminal punctuation run followed by whitespace or end of text
_SENTENCE_END = re.compile(r"[.!?]+(?=\s|$)")

# Decimal or grouped numbers ("3.5", "1,200") are one word; otherwise
# alphanumeric runs with internal apostrophes or hyphens ("don't", "follow-up")
WORD_PATTERN = re.compile(r"[0-9]+(?:[.,][0-9]+)+|[A-Za-z0-9]+(?:['’\-][A-Za-z0-9]+)*")

_VOWEL_GROUP = re.compile(r"[aeiouy]+")
_DIGIT_GROUP = re.compile(r"[0-9]+")
_ALNUM = re.compile(r"[A-Za-z0-9]")


class ReadabilityError(Exception):
    """Raised when text cannot be measured."""

    def __init__(self, message: str, text: Optional[str] = None):
        self.message = message
        self.text = text
        super().__init__(message)


@dataclass(frozen=True)
class TextStats:
    """Sentence, word and syllable counts for a body of text."""
    sentence_count: int
    word_count: int
    syllable_count: int

    def __post_init__(self):
        if self.sentence_count < 1 or self.word_count < 1 or self.syllable_count < 1:
            raise ReadabilityError(f"All counts must be >= 1: {self}")
        if self.syllable_count < self.word_count:
            raise ReadabilityError(
                f"syllable_count ({self.syllable_count}) < word_count ({self.word_count})"
            )

    def to_dict(self) -> Dict[str, int]:
        return {
            "sentences": self.sentence_count,
            "words": self.word_count,
            "syllables": self.syllable_count,
        }


@dataclass(frozen=True)
class ReadabilityConfig:
    """
    Standardization settings.

    Attributes:
        target_grade: Grade level that scores 1.0
        span: Grade distance from the target at which the score reaches 0
    """
    target_grade: float = DEFAULT_TARGET_GRADE
    span: float = DEFAULT_GRADE_SPAN

    def __post_init__(self):
        if not self.target_grade > 0:
            raise ReadabilityError(f"target_grade must be > 0, got {self.target_grade}")
        if not self.span > 0:
            raise ReadabilityError(f"span must be > 0, got {self.span}")

    def to_dict(self) -> Dict[str, float]:
        return {"target_grade": self.target_grade, "span": self.span}


# ============================================================================
# Tokenization
# ============================================================================

def _ends_with_abbreviation(chunk: str) -> bool:
    tokens = chunk.split()
    return bool(tokens) and tokens[-1].lower() in ABBREVIATIONS


def segment_sentences(text: str) -> List[str]:
    """
    Split text into sentences.

    A sentence ends at a run of '.', '!' or '?' followed by whitespace or
    the end of the text, unless the token before it is a listed
    abbreviation. A trailing sentence without terminal punctuation still
    counts. Pieces without any letter or digit are dropped.

    Raises:
        ReadabilityError: text is empty after trimming
    """
    if text is None or not text.strip():
        raise ReadabilityError("Cannot segment empty text")

    text = text.strip()
    sentences: List[str] = []
    start = 0

    for match in _SENTENCE_END.finditer(text):
        chunk = text[start:match.end()]
        if match.group() == "." and _ends_with_abbreviation(chunk):
            continue
        sentences.append(chunk.strip())
        start = match.end()

    tail = text[start:].strip()
    if tail:
        sentences.append(tail)

    sentences = [s for s in sentences if _ALNUM.search(s)]
    if not sentences:
        raise ReadabilityError("Text contains no sentences", text=text)
    return sentences


def extract_words(text: str) -> List[str]:
    """Return the word tokens of text, hyphenated compounds kept whole."""
    return WORD_PATTERN.findall(text or "")


def count_syllables(word: str) -> int:
    """
    Count syllables with the vowel-group heuristic.

    Counts contiguous runs of a/e/i/o/u/y, drops one for a silent final
    "e" (but not "-le"), and never returns less than 1. Purely numeric
    tokens count one syllable per digit group.

    Raises:
        ReadabilityError: word has no letters or digits
    """
    lowered = (word or "").lower()

    if not re.search(r"[a-z]", lowered):
        digit_groups = _DIGIT_GROUP.findall(lowered)
        if not digit_groups:
            raise ReadabilityError(f"Word has no alphabetic characters: {word!r}")
        return len(digit_groups)

    count = len(_VOWEL_GROUP.findall(lowered))
    if lowered.endswith("e") and not lowered.endswith("le") and count > 1:
        count -= 1
    return max(count, 1)


def text_stats(text: str) -> TextStats:
    """
    Count sentences, words and syllables.

    Raises:
        ReadabilityError: empty text or text with zero words
    """
    sentences = segment_sentences(text)
    words = extract_words(text)
    if not words:
        raise ReadabilityError("Text contains no words", text=text)

    syllables = sum(count_syllables(w) for w in words)
    return TextStats(
        sentence_count=len(sentences),
        word_count=len(words),
        syllable_count=syllables,
    )


# ============================================================================
# Grade and Score
# ============================================================================

def fkgl(stats: TextStats) -> float:
    """Flesch-Kincaid Grade Level. May be negative for very simple text."""
    words_per_sentence = stats.word_count / stats.sentence_count
    syllables_per_word = stats.syllable_count / stats.word_count
    return (
        FKGL_SENTENCE_WEIGHT * words_per_sentence
        + FKGL_SYLLABLE_WEIGHT * syllables_per_word
        - FKGL_INTERCEPT
    )


def grade_of(text: str) -> float:
    """Shorthand for fkgl(text_stats(text))."""
    return fkgl(text_stats(text))


def readability_score(grade: float, cfg: Optional[ReadabilityConfig] = None) -> float:
    """
    Map a grade onto [0, 1]: 1 at the target, falling linearly to 0 at
    target +/- span.
    """
    cfg = cfg or ReadabilityConfig()
    score = 1.0 - abs(grade - cfg.target_grade) / cfg.span
    return min(1.0, max(0.0, score))


def reference_grade(text: str) -> Optional[float]:
    """
    FKGL computed by textstat, for comparison with the in-house value.

    Returns None when textstat is not installed.
    """
    try:
        import textstat
    except ImportError:
        logger.debug("textstat not installed; skipping reference grade")
        return None
    return float(textstat.flesch_kincaid_grade(text))
