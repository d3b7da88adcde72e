"""Failure taxonomy: error types, hypothesis templates and sampling tables.

The taxonomy is data. Every error type, its hypothesis sentence, the nearby
(confusable) types and the counter-evidence phrases come from a YAML
document; `aegis14.yaml` next to this module is the shipped default.
"""
from dataclasses import dataclass
from functools import lru_cache
import logging
from pathlib import Path
import re
from typing import Any, Iterator, Mapping, Union

import voluptuous as vol
import yaml

from ..const import (
    CATEGORIES,
    CATEGORY_UNASSIGNED,
    ERROR_CODE_PATTERN,
    FAMILIES,
    FAMILY_OTHER,
)
from ..exceptions import TaxonomyError

_LOGGER = logging.getLogger(__name__)

DEFAULT_TAXONOMY_PATH = Path(__file__).parent / "aegis14.yaml"
MAX_NEARBY = 5

_CODE_RE = re.compile(rf"^{ERROR_CODE_PATTERN}$")


def _error_code(value: Any) -> str:
    """Validate and normalize an error code."""
    code = str(value).strip().upper()
    if not _CODE_RE.match(code):
        raise vol.Invalid(f"not an error code: {value!r}")
    return code


def _phrase(value: Any) -> str:
    """Validate and lowercase one counter-evidence phrase."""
    phrase = str(value).strip().lower()
    if not phrase:
        raise vol.Invalid("empty counter-evidence phrase")
    return phrase


TYPE_SCHEMA = vol.Schema(
    {
        vol.Required("id"): _error_code,
        vol.Required("definition"): vol.All(str, vol.Strip, vol.Length(min=1)),
        vol.Required("hypothesis"): vol.All(str, vol.Strip, vol.Length(min=1)),
        vol.Optional("nearby", default=list): vol.All([_error_code], vol.Length(max=MAX_NEARBY)),
        vol.Optional("counter_evidence", default=list): [_phrase],
        vol.Optional("category", default=CATEGORY_UNASSIGNED): vol.All(
            str, vol.Lower, vol.In(CATEGORIES)
        ),
    }
)

DOCUMENT_SCHEMA = vol.Schema(
    {
        vol.Optional("version", default="custom"): vol.Coerce(str),
        vol.Required("types"): list,
    },
    extra=vol.ALLOW_EXTRA,
)


@dataclass(frozen=True)
class ErrorType:
    """One failure mode of the taxonomy."""

    id: str
    definition: str
    hypothesis_text: str
    nearby: tuple[str, ...] = ()
    counter_evidence: tuple[str, ...] = ()
    category: str = CATEGORY_UNASSIGNED

    @property
    def family(self) -> str:
        """Return the family (task execution, coordination, verification)."""
        group = self.id.split("-", 1)[1].split(".", 1)[0]
        return FAMILIES.get(group, FAMILY_OTHER)


@dataclass(frozen=True)
class Taxonomy:
    """An ordered, validated set of error types."""

    types: tuple[ErrorType, ...]
    version: str = "custom"

    def __post_init__(self) -> None:
        object.__setattr__(self, "_index", {error.id: error for error in self.types})

    def __iter__(self) -> Iterator[ErrorType]:
        return iter(self.types)

    def __len__(self) -> int:
        return len(self.types)

    def __contains__(self, code: object) -> bool:
        return isinstance(code, str) and code.strip().upper() in self._index  # type: ignore[attr-defined]

    @property
    def codes(self) -> tuple[str, ...]:
        """Return every error code in document order."""
        return tuple(error.id for error in self.types)

    @property
    def has_categories(self) -> bool:
        """Return True when at least one type has an assigned category."""
        return any(error.category != CATEGORY_UNASSIGNED for error in self.types)

    def get(self, code: str) -> ErrorType:
        """Return the error type for a code or raise TaxonomyError."""
        key = str(code).strip().upper()
        try:
            return self._index[key]  # type: ignore[attr-defined]
        except KeyError:
            raise TaxonomyError(f"unknown error id {code!r}", error_id=str(code)) from None

    def normalize(self, code: str) -> str:
        """Return the canonical spelling of a known code."""
        return self.get(code).id


def parse_taxonomy(document: Mapping[str, Any]) -> Taxonomy:
    """Validate an already-parsed taxonomy document."""
    if not isinstance(document, Mapping):
        raise TaxonomyError("malformed taxonomy document: expected a mapping with 'types'")
    try:
        doc = DOCUMENT_SCHEMA(dict(document))
    except vol.Invalid as err:
        raise TaxonomyError(f"malformed taxonomy document: {err}") from err

    if not doc["types"]:
        raise TaxonomyError("empty taxonomy")

    types: list[ErrorType] = []
    seen: set[str] = set()
    for position, raw in enumerate(doc["types"]):
        raw_id = raw.get("id") if isinstance(raw, Mapping) else None
        try:
            entry = TYPE_SCHEMA(dict(raw) if isinstance(raw, Mapping) else raw)
        except vol.Invalid as err:
            raise TaxonomyError(
                f"malformed error type #{position} ({raw_id}): {err}", error_id=raw_id
            ) from err

        code = entry["id"]
        if code in seen:
            raise TaxonomyError(f"duplicate error id {code}", error_id=code)
        seen.add(code)
        types.append(
            ErrorType(
                id=code,
                definition=entry["definition"],
                hypothesis_text=entry["hypothesis"],
                nearby=tuple(entry["nearby"]),
                counter_evidence=tuple(entry["counter_evidence"]),
                category=entry["category"],
            )
        )

    for error in types:
        for near in error.nearby:
            if near == error.id:
                raise TaxonomyError(f"{error.id} lists itself as nearby", error_id=error.id)
            if near not in seen:
                raise TaxonomyError(
                    f"dangling nearby reference {near} in {error.id}", error_id=error.id
                )
        if len(types) > 1 and not error.nearby:
            raise TaxonomyError(f"{error.id} has no nearby error types", error_id=error.id)

    taxonomy = Taxonomy(types=tuple(types), version=doc["version"])
    _LOGGER.debug(f"Parsed taxonomy {taxonomy.version} with {len(taxonomy)} error types")
    return taxonomy


def load_taxonomy(source: Union[str, Path, Mapping[str, Any], None] = None) -> Taxonomy:
    """Load a taxonomy from a YAML/JSON file, a parsed mapping, or the default."""
    if source is None:
        return load_default_taxonomy()
    if isinstance(source, Mapping):
        return parse_taxonomy(source)

    path = Path(source)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise TaxonomyError(f"cannot read taxonomy document {path}: {err}") from err
    try:
        document = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise TaxonomyError(f"malformed taxonomy document {path}: {err}") from err

    taxonomy = parse_taxonomy(document)
    _LOGGER.info(f"Loaded taxonomy {taxonomy.version} ({len(taxonomy)} types) from {path}")
    return taxonomy


@lru_cache(maxsize=1)
def load_default_taxonomy() -> Taxonomy:
    """Load the shipped 14-type taxonomy."""
    return load_taxonomy(DEFAULT_TAXONOMY_PATH)


def hypothesis_for(taxonomy: Taxonomy, code: str) -> str:
    """Return the hypothesis sentence used verbatim in prompts."""
    return taxonomy.get(code).hypothesis_text


def nearby_of(taxonomy: Taxonomy, code: str) -> list[str]:
    """Return the nearby error codes in table order."""
    return list(taxonomy.get(code).nearby)


def counter_evidence_match(taxonomy: Taxonomy, code: str, text: str) -> list[str]:
    """Return the counter-evidence phrases of `code` found in `text`.

    Plain case-insensitive substring search, in table order.
    """
    phrases = taxonomy.get(code).counter_evidence
    haystack = (text or "").lower()
    return [phrase for phrase in phrases if phrase in haystack]


__all__ = [
    "DEFAULT_TAXONOMY_PATH",
    "ErrorType",
    "Taxonomy",
    "counter_evidence_match",
    "hypothesis_for",
    "load_default_taxonomy",
    "load_taxonomy",
    "nearby_of",
    "parse_taxonomy",
]
