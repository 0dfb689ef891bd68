"""
Letter Parser
=============

Parsers for the structured output the prompt templates demand.

Generation output:

    <letter body>
    === ICD-10 CODES ===
    E11.9 | Type 2 diabetes mellitus without complications

Extraction output is the code block alone.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple
import logging
import re

from letter_config import CODES_DELIMITER

logger = logging.getLogger(__name__)

# "CODE | description", optionally bulleted
CODE_LINE_PATTERN = re.compile(r"^\s*[-*]?\s*([A-Za-z0-9.]+)\s*\|\s*(.+?)\s*$")


class ParseError(Exception):
    """Raised when assistant output cannot be parsed."""

    def __init__(self, message: str, raw: Optional[str] = None):
        self.message = message
        self.raw = raw
        super().__init__(message)


@dataclass(frozen=True)
class DeclaredCode:
    """A code as the LLM wrote it, with its stated description."""
    raw_code: str
    description: str

    def to_dict(self) -> dict:
        return {"code": self.raw_code, "description": self.description}


@dataclass(frozen=True)
class ParsedGeneration:
    """Letter body plus the codes the letter declares."""
    letter_body: str
    declared_codes: Tuple[DeclaredCode, ...] = field(default_factory=tuple)
    has_delimiter: bool = True

    def __post_init__(self):
        if not self.letter_body or not self.letter_body.strip():
            raise ParseError("empty letter body")


def _parse_code_line(line: str) -> Optional[DeclaredCode]:
    match = CODE_LINE_PATTERN.match(line)
    if not match:
        return None
    return DeclaredCode(raw_code=match.group(1), description=match.group(2))


def _split_at_delimiter(raw: str) -> Tuple[str, Optional[str]]:
    lines = raw.splitlines()
    for i, line in enumerate(lines):
        if line.strip() == CODES_DELIMITER:
            return "\n".join(lines[:i]), "\n".join(lines[i + 1:])
    return raw, None


def parse_generation(raw: str) -> ParsedGeneration:
    """
    Split a generation completion into letter body and declared codes.

    A completion without the delimiter line is a letter with no declared
    codes. Non-conforming lines in the code block are skipped.

    Raises:
        ParseError: empty input or empty letter body
    """
    if raw is None or not raw.strip():
        raise ParseError("empty completion", raw=raw)

    body, code_block = _split_at_delimiter(raw)
    body = body.strip()
    if not body:
        raise ParseError("empty letter body", raw=raw)

    if code_block is None:
        logger.warning("Generation has no ICD-10 code block; treating as zero declared codes")
        return ParsedGeneration(letter_body=body, declared_codes=(), has_delimiter=False)

    declared = []
    for line in code_block.splitlines():
        if not line.strip():
            continue
        code = _parse_code_line(line)
        if code is None:
            logger.debug(f"Skipping non-conforming code line: {line!r}")
            continue
        declared.append(code)

    return ParsedGeneration(letter_body=body, declared_codes=tuple(declared))


def parse_code_list(raw: str) -> List[DeclaredCode]:
    """
    Parse 'CODE | description' lines, skipping blanks and anything else.

    A leading delimiter line is tolerated.

    Raises:
        ParseError: "zero parseable lines"
    """
    if raw is None or not raw.strip():
        raise ParseError("zero parseable lines", raw=raw)

    codes = []
    for line in raw.splitlines():
        if not line.strip() or line.strip() == CODES_DELIMITER:
            continue
        code = _parse_code_line(line)
        if code is None:
            logger.info(f"Skipping non-conforming extraction line: {line!r}")
            continue
        codes.append(code)

    if not codes:
        raise ParseError("zero parseable lines", raw=raw)
    return codes


def format_generation(letter_body: str, codes: Sequence[Tuple[str, str]]) -> str:
    """Render (letter, codes) in the generation output format."""
    lines = [letter_body.strip(), CODES_DELIMITER]
    lines.extend(f"{code} | {description}" for code, description in codes)
    return "\n".join(lines)


def format_code_list(codes: Sequence[Tuple[str, str]]) -> str:
    """Render codes in the extraction output format."""
    return "\n".join(f"{code} | {description}" for code, description in codes)
