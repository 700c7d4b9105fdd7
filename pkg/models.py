"""
Data models for the refusal-aware VTG toolkit.

All models are frozen dataclasses: immutable once built, safe to share
across threads.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, FrozenSet, List, Optional

from errors import InvariantError


# Canonical text of a grounded answer.
TIME_ANSWER_TEMPLATE = "From {start} to {end} seconds."


class Relevance(Enum):
    """Whether a query matches its video."""
    RELEVANT = "relevant"
    IRRELEVANT = "irrelevant"


class DifficultyTier(Enum):
    """Hard-irrelevance level, by number of modified semantic elements."""
    STRONG = "strong"
    MODERATE = "moderate"
    WEAK = "weak"

    @property
    def modified_element_count(self) -> int:
        return _TIER_COUNTS[self]

    @property
    def label(self) -> str:
        return self.value.capitalize()

    @classmethod
    def from_count(cls, count: int) -> "DifficultyTier":
        for tier, tier_count in _TIER_COUNTS.items():
            if tier_count == count:
                return tier
        raise InvariantError("tier-count", f"no tier modifies {count} elements")


_TIER_COUNTS = {
    DifficultyTier.STRONG: 1,
    DifficultyTier.MODERATE: 2,
    DifficultyTier.WEAK: 3,
}


class CategoryParent(Enum):
    """High-level semantic relevance type."""
    ACTION = "Action"
    OBJECT = "Object"
    SCENE = "Scene"
    ATTRIBUTE = "Attribute"


class CategoryChild(Enum):
    """Leaf semantic relevance category."""
    ACTION_SEQUENCE = "ActionSequence"
    FINE_GRAINED_ACTION = "FineGrainedAction"
    OBJECT_EXISTENCE = "ObjectExistence"
    OBJECT_PART_RELATION = "ObjectPartRelation"
    OBJECT_SPATIAL_RELATION = "ObjectSpatialRelation"
    OBJECT_MOVING = "ObjectMoving"
    SCENE_EXISTENCE = "SceneExistence"
    SCENE_TRANSITION = "SceneTransition"
    ATTRIBUTE_VALUE = "AttributeValue"
    COUNTING = "Counting"
    COMPARISON = "Comparison"


CHILD_PARENT: Dict[CategoryChild, CategoryParent] = {
    CategoryChild.ACTION_SEQUENCE: CategoryParent.ACTION,
    CategoryChild.FINE_GRAINED_ACTION: CategoryParent.ACTION,
    CategoryChild.OBJECT_EXISTENCE: CategoryParent.OBJECT,
    CategoryChild.OBJECT_PART_RELATION: CategoryParent.OBJECT,
    CategoryChild.OBJECT_SPATIAL_RELATION: CategoryParent.OBJECT,
    CategoryChild.OBJECT_MOVING: CategoryParent.OBJECT,
    CategoryChild.SCENE_EXISTENCE: CategoryParent.SCENE,
    CategoryChild.SCENE_TRANSITION: CategoryParent.SCENE,
    CategoryChild.ATTRIBUTE_VALUE: CategoryParent.ATTRIBUTE,
    CategoryChild.COUNTING: CategoryParent.ATTRIBUTE,
    CategoryChild.COMPARISON: CategoryParent.ATTRIBUTE,
}


@dataclass(frozen=True)
class RelevanceCategory:
    """A (parent, child) taxonomy leaf, canonically written "Parent/Child"."""
    parent: CategoryParent
    child: CategoryChild

    def __post_init__(self):
        if CHILD_PARENT[self.child] is not self.parent:
            raise InvariantError(
                "category-parent",
                f"{self.child.value} does not belong under {self.parent.value}",
            )

    @property
    def path(self) -> str:
        return f"{self.parent.value}/{self.child.value}"

    @property
    def tag(self) -> str:
        """Block tag used in generated reasoning, e.g. "object_objectexistence"."""
        return self.path.lower().replace("/", "_")

    def __str__(self):
        return self.path


@dataclass(frozen=True)
class Segment:
    """A temporal interval in seconds."""
    start: float
    end: float

    def __post_init__(self):
        for name in ("start", "end"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise InvariantError(
                    "segment-bounds", f"{name}={value!r} must be finite and >= 0"
                )
        if self.start > self.end:
            raise InvariantError(
                "segment-order", f"start {self.start} exceeds end {self.end}"
            )

    @property
    def length(self) -> float:
        return self.end - self.start

    def render_answer(self) -> str:
        """Textual time-aware answer used as an explain-reward reference."""
        return TIME_ANSWER_TEMPLATE.format(start=self.start, end=self.end)

    def to_list(self) -> List[float]:
        return [self.start, self.end]

    def __str__(self):
        return f"[{self.start}, {self.end}]"


@dataclass(frozen=True)
class GroundingSample:
    """One evaluation/training unit. Build through validators.validate_sample."""
    sample_id: str
    video_id: str
    video_context: str
    query: str
    relevance: Relevance
    difficulty: Optional[DifficultyTier] = None
    gt_segment: Optional[Segment] = None
    gt_refusal: Optional[str] = None
    original_query: Optional[str] = None
    gt_categories: Optional[FrozenSet[RelevanceCategory]] = None
    # Explain-reward negatives: the sibling's segment or refusal.
    paired_segment: Optional[Segment] = None
    paired_refusal: Optional[str] = None

    @property
    def is_relevant(self) -> bool:
        return self.relevance is Relevance.RELEVANT

    def to_record(self) -> Dict[str, Any]:
        """Serialize to the JSONL dataset schema (optional keys omitted)."""
        record: Dict[str, Any] = {
            "sample_id": self.sample_id,
            "video_id": self.video_id,
            "video_context": self.video_context,
            "query": self.query,
            "relevance": self.relevance.value,
        }
        if self.difficulty is not None:
            record["difficulty"] = self.difficulty.value
        if self.gt_segment is not None:
            record["gt_segment"] = self.gt_segment.to_list()
        if self.gt_refusal is not None:
            record["gt_refusal"] = self.gt_refusal
        if self.original_query is not None:
            record["original_query"] = self.original_query
        if self.gt_categories is not None:
            record["gt_categories"] = sorted(c.path for c in self.gt_categories)
        if self.paired_segment is not None:
            record["paired_segment"] = self.paired_segment.to_list()
        if self.paired_refusal is not None:
            record["paired_refusal"] = self.paired_refusal
        return record


@dataclass(frozen=True)
class StructuredOutput:
    """Parsed model output: <think>, <answer>, <correct> sections."""
    think: str
    answer: str
    correct: Optional[str] = None
    segment: Optional[Segment] = None
    raw: str = ""

    @property
    def has_segment(self) -> bool:
        return self.segment is not None
