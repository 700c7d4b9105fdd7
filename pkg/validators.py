"""
Validators for dataset records and category paths.
Uses Strategy Pattern with abstract base class.
"""

import logging
import math
from abc import ABC, abstractmethod
from typing import Any, Dict, FrozenSet, List, Mapping, Optional, Tuple

from errors import InvariantError, SchemaError, UnknownCategory
from factories import TAXONOMY
from models import (
    DifficultyTier,
    GroundingSample,
    Relevance,
    RelevanceCategory,
    Segment,
)

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("sample_id", "video_id", "video_context", "query", "relevance")
IRRELEVANT_FIELDS = ("difficulty", "gt_refusal", "original_query", "gt_categories")
RELEVANT_FIELDS = ("gt_segment",)
KNOWN_FIELDS = frozenset(
    REQUIRED_FIELDS + IRRELEVANT_FIELDS + RELEVANT_FIELDS + ("paired_segment", "paired_refusal")
)


class Validator(ABC):
    """Abstract base class for validators."""

    @abstractmethod
    def validate(self, value: Any, registry: Optional[Dict] = None) -> Tuple[bool, Optional[str]]:
        """Validate a value, optionally against a registry."""


class CategoryValidator(Validator):
    """Validates a "Parent/Child" path. Matching is case-sensitive."""

    def validate(self, value: Any, registry: Optional[Dict] = None) -> Tuple[bool, Optional[str]]:
        registry = TAXONOMY if registry is None else registry
        if not isinstance(value, str) or value not in registry:
            return False, f"Invalid category: {value!r}."
        return True, None


class CategoryListValidator:
    """Validates a list of category paths."""

    def __init__(self, category_validator: CategoryValidator):
        self.category_validator = category_validator

    def validate(self, paths: List[Any], registry: Optional[Dict] = None) -> Tuple[bool, Optional[str], List[str]]:
        """Validate multiple paths and return them in order."""
        valid_paths = []
        for path in paths:
            is_valid, error = self.category_validator.validate(path, registry)
            if not is_valid:
                return False, error, []
            valid_paths.append(path)
        return True, None, valid_paths


class SegmentValidator(Validator):
    """Validates a [start, end] pair of seconds."""

    def validate(self, value: Any, registry: Optional[Dict] = None) -> Tuple[bool, Optional[str]]:
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            return False, "expected a [start, end] pair"
        for bound in value:
            if isinstance(bound, bool) or not isinstance(bound, (int, float)):
                return False, f"non-numeric bound {bound!r}"
        start, end = float(value[0]), float(value[1])
        if not (math.isfinite(start) and math.isfinite(end)) or start < 0 or end < 0:
            return False, "bounds must be finite and >= 0"
        if start > end:
            return False, f"start {start} exceeds end {end}"
        return True, None


_category_validator = CategoryValidator()
_segment_validator = SegmentValidator()


def parse_category_path(path: str) -> RelevanceCategory:
    """Return the taxonomy leaf for an exact "Parent/Child" path."""
    is_valid, _ = _category_validator.validate(path)
    if not is_valid:
        raise UnknownCategory(path)
    return TAXONOMY[path].category


def _require_text(record: Mapping[str, Any], name: str) -> str:
    value = record.get(name)
    if value is None:
        raise SchemaError(name, "missing")
    if not isinstance(value, str):
        raise SchemaError(name, f"expected text, got {type(value).__name__}")
    return value


def _optional_text(record: Mapping[str, Any], name: str) -> Optional[str]:
    if record.get(name) is None:
        return None
    return _require_text(record, name)


def _parse_segment(record: Mapping[str, Any], name: str) -> Segment:
    value = record.get(name)
    if value is None:
        raise SchemaError(name, "missing")
    if not isinstance(value, (list, tuple)) or len(value) != 2 or any(
        isinstance(b, bool) or not isinstance(b, (int, float)) for b in value
    ):
        raise SchemaError(name, "expected a [start, end] pair of numbers")
    is_valid, error = _segment_validator.validate(value)
    if not is_valid:
        raise InvariantError("segment", f"{name}: {error}")
    return Segment(float(value[0]), float(value[1]))


def _parse_categories(record: Mapping[str, Any]) -> FrozenSet[RelevanceCategory]:
    value = record.get("gt_categories")
    if value is None:
        raise SchemaError("gt_categories", "missing")
    if not isinstance(value, list) or not value:
        raise SchemaError("gt_categories", "expected a non-empty list of paths")
    is_valid, error, paths = CategoryListValidator(_category_validator).validate(value)
    if not is_valid:
        raise SchemaError("gt_categories", error)
    if len(set(paths)) != len(paths):
        raise InvariantError("categories-distinct", "gt_categories contains duplicates")
    return frozenset(parse_category_path(p) for p in paths)


def validate_sample(record: Mapping[str, Any]) -> GroundingSample:
    """Validate a decoded JSONL record and build a GroundingSample.

    Missing required fields raise SchemaError naming the field; nothing is
    defaulted. Well-typed records breaking a cross-field rule raise
    InvariantError.
    """
    if not isinstance(record, Mapping):
        raise SchemaError("record", "expected a JSON object")

    for name in REQUIRED_FIELDS:
        _require_text(record, name)
    if not record["sample_id"]:
        raise SchemaError("sample_id", "empty")

    try:
        relevance = Relevance(record["relevance"])
    except ValueError as exc:
        raise SchemaError("relevance", f"unknown value {record['relevance']!r}") from exc

    extra = sorted(set(record) - KNOWN_FIELDS)
    if extra:
        logger.debug("Ignoring unknown fields in %s: %s", record["sample_id"], extra)

    common = dict(
        sample_id=record["sample_id"],
        video_id=record["video_id"],
        video_context=record["video_context"],
        query=record["query"],
        relevance=relevance,
    )

    if relevance is Relevance.RELEVANT:
        gt_segment = _parse_segment(record, "gt_segment")
        stray = [name for name in IRRELEVANT_FIELDS + ("paired_segment",) if record.get(name) is not None]
        if stray:
            raise InvariantError(
                "relevance-fields", f"relevant sample carries {', '.join(stray)}"
            )
        return GroundingSample(
            **common,
            gt_segment=gt_segment,
            paired_refusal=_optional_text(record, "paired_refusal"),
        )

    # Irrelevant: every refusal-side field is required.
    for name in IRRELEVANT_FIELDS:
        if record.get(name) is None:
            raise SchemaError(name, "missing")
    stray = [name for name in RELEVANT_FIELDS + ("paired_refusal",) if record.get(name) is not None]
    if stray:
        raise InvariantError(
            "relevance-fields", f"irrelevant sample carries {', '.join(stray)}"
        )
    try:
        difficulty = DifficultyTier(record["difficulty"])
    except ValueError as exc:
        raise SchemaError("difficulty", f"unknown tier {record['difficulty']!r}") from exc
    gt_refusal = _require_text(record, "gt_refusal")
    original_query = _require_text(record, "original_query")
    categories = _parse_categories(record)
    if len(categories) != difficulty.modified_element_count:
        raise InvariantError(
            "category-cardinality",
            f"{difficulty.value} tier needs {difficulty.modified_element_count} "
            f"categories, got {len(categories)}",
        )
    paired_segment = None
    if record.get("paired_segment") is not None:
        paired_segment = _parse_segment(record, "paired_segment")

    return GroundingSample(
        **common,
        difficulty=difficulty,
        gt_refusal=gt_refusal,
        original_query=original_query,
        gt_categories=categories,
        paired_segment=paired_segment,
    )
