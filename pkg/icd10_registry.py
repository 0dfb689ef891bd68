"""
ICD-10 Registry
===============

Loads the ICD-10-CM code set and answers code questions for the scorer.

Features:
- Full code set from the simple-icd-10-cm package (the default)
- Tab-separated code table loading with strict row checks
- Code normalization to canonical dotted form (e119 -> E11.9)
- Registry validation and official description lookup
- Case/whitespace-insensitive description comparison
"""

from dataclasses import dataclass
from functools import lru_cache
from importlib import metadata
from pathlib import Path
from types import MappingProxyType
from typing import Dict, Iterator, Mapping, Optional, Union
import logging
import re

from letter_config import ICD10_PACKAGE, SOURCE_VERSION_PREFIX

logger = logging.getLogger(__name__)

# One letter, two alphanumerics, optional dot + 1-4 alphanumerics
ICD10_CODE_PATTERN = re.compile(r"^[A-Z][0-9A-Z]{2}(\.[0-9A-Z]{1,4})?$")


class RegistryError(Exception):
    """Raised for registry load failures and invalid codes."""

    def __init__(self, message: str, path: Optional[Path] = None, line_number: Optional[int] = None):
        self.message = message
        self.path = path
        self.line_number = line_number
        location = ""
        if path is not None:
            location = f" ({path}" + (f":{line_number}" if line_number else "") + ")"
        super().__init__(f"{message}{location}")


class InvalidCodeError(RegistryError):
    """Raised when a code cannot be normalized to the ICD-10 pattern."""

    def __init__(self, raw: str, reason: str = "pattern violation"):
        self.raw = raw
        super().__init__(f"Invalid ICD-10 code {raw!r}: {reason}")


class UnknownCodeError(RegistryError):
    """Raised when a well-formed code is not in the registry."""

    def __init__(self, code: str):
        self.code = code
        super().__init__(f"Unknown ICD-10 code: {code}")


class Icd10Code(str):
    """
    Canonical ICD-10-CM code string (uppercase, dotted).

    Construct through normalize_code(); the constructor only checks the
    pattern and never rewrites its input.
    """

    def __new__(cls, value: str) -> "Icd10Code":
        if not ICD10_CODE_PATTERN.match(value):
            raise InvalidCodeError(value)
        return super().__new__(cls, value)


@dataclass(frozen=True)
class Icd10Entry:
    """A code with its official description."""
    code: Icd10Code
    description: str

    def __post_init__(self):
        if not self.description or not self.description.strip():
            raise RegistryError(f"Empty description for code {self.code}")


@dataclass(frozen=True)
class Registry:
    """
    Immutable view of a loaded ICD-10-CM table.

    Attributes:
        entries: Canonical code -> entry (read-only mapping)
        source_version: Release identifier recorded in the table file
    """
    entries: Mapping[str, Icd10Entry]
    source_version: str = "unknown"

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, code: object) -> bool:
        return code in self.entries

    def __iter__(self) -> Iterator[Icd10Entry]:
        return iter(self.entries.values())


def normalize_code(raw: str) -> Icd10Code:
    """
    Normalize free-form LLM code text to canonical form.

    Trims, uppercases, and inserts the dot after the third character
    when it is absent and a fourth character exists.

    Raises:
        InvalidCodeError: empty input or pattern violation
    """
    if raw is None or not raw.strip():
        raise InvalidCodeError(raw or "", "empty code")

    code = raw.strip().upper()
    if "." not in code and len(code) > 3:
        code = f"{code[:3]}.{code[3:]}"

    if not ICD10_CODE_PATTERN.match(code):
        raise InvalidCodeError(raw)
    return Icd10Code(code)


def load_registry(path: Union[str, Path]) -> Registry:
    """
    Load the ICD-10-CM table from a CODE<TAB>DESCRIPTION file.

    Lines starting with '#' are comments; a '# source_version: X' comment
    sets Registry.source_version (defaults to the file stem).

    Raises:
        RegistryError: missing file, malformed row, duplicate code, zero rows
    """
    path = Path(path)
    if not path.exists():
        raise RegistryError("Registry file not found", path=path)

    entries: Dict[str, Icd10Entry] = {}
    source_version = path.stem

    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                if line.startswith(SOURCE_VERSION_PREFIX):
                    source_version = line[len(SOURCE_VERSION_PREFIX):].strip() or source_version
                continue

            columns = line.split("\t")
            if len(columns) != 2:
                raise RegistryError(
                    f"Malformed row: expected 2 columns, got {len(columns)}",
                    path=path, line_number=line_number,
                )

            raw_code, description = columns
            try:
                code = normalize_code(raw_code)
            except InvalidCodeError as e:
                raise RegistryError(e.message, path=path, line_number=line_number)

            if code in entries:
                raise RegistryError(f"Duplicate code {code}", path=path, line_number=line_number)

            if not description.strip():
                raise RegistryError(f"Empty description for code {code}", path=path, line_number=line_number)

            entries[code] = Icd10Entry(code=code, description=description.strip())

    if not entries:
        raise RegistryError("Registry file has zero rows", path=path)

    logger.debug(f"Loaded {len(entries)} ICD-10 codes from {path} ({source_version})")
    return Registry(entries=MappingProxyType(entries), source_version=source_version)


@lru_cache(maxsize=1)
def load_package_registry() -> Registry:
    """
    Load every ICD-10-CM code shipped with simple-icd-10-cm.

    Chapters ("1") and blocks ("A00-A09") are skipped; categories,
    subcategories and seven-character codes are kept with their
    descriptions. The result is cached for the process.

    Raises:
        RegistryError: package not installed
    """
    try:
        import simple_icd_10_cm as cm
    except ImportError:
        raise RegistryError(
            f"{ICD10_PACKAGE} is not installed; install it or pass a CODE<TAB>DESCRIPTION table"
        )

    entries: Dict[str, Icd10Entry] = {}
    for code in cm.get_all_codes(with_dots=True):
        if not ICD10_CODE_PATTERN.match(code):
            continue
        description = (cm.get_description(code) or "").strip()
        if description:
            entries[code] = Icd10Entry(code=Icd10Code(code), description=description)

    if not entries:
        raise RegistryError(f"{ICD10_PACKAGE} returned no codes")

    try:
        release = metadata.version(ICD10_PACKAGE)
    except metadata.PackageNotFoundError:
        release = "unknown"
    source_version = f"ICD-10-CM ({ICD10_PACKAGE} {release})"

    logger.debug(f"Loaded {len(entries)} ICD-10 codes from {source_version}")
    return Registry(entries=MappingProxyType(entries), source_version=source_version)


def open_registry(path: Union[str, Path, None] = None) -> Registry:
    """The table at `path` when one is given, otherwise the package code set."""
    if path is None:
        return load_package_registry()
    return load_registry(path)


def validate_code(reg: Registry, code: str) -> bool:
    """True iff the canonical code exists in the registry."""
    return code in reg.entries


def get_description(reg: Registry, code: str) -> str:
    """
    Return the stored official description verbatim.

    Raises:
        UnknownCodeError: code is not in the registry
    """
    entry = reg.entries.get(code)
    if entry is None:
        raise UnknownCodeError(code)
    return entry.description


def _normalize_description(text: str) -> str:
    return " ".join((text or "").split()).casefold()


def descriptions_match(a: str, b: str) -> bool:
    """
    Exact comparison after trimming, whitespace collapsing and case folding.

    Synonyms ("High blood pressure" vs "Essential (primary) hypertension")
    do not match.
    """
    return _normalize_description(a) == _normalize_description(b)
