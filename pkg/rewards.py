"""
Refusal-aware reward objectives.
Uses Strategy Pattern with abstract base class and Chain of Responsibility.

The total reward is the unweighted sum of four objectives: format,
refuse-IoU, explain and query correction.
"""

import logging
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from errors import (
    ConfigError,
    DimensionMismatch,
    EmbeddingProviderError,
    InvariantError,
    ProviderError,
    ZeroVector,
)
from models import GroundingSample, Segment, StructuredOutput
from providers import EmbeddingProvider
from template_parser import ParseDiagnostics, extract_sections, extract_segment, parse_output

logger = logging.getLogger(__name__)

REWARD_COMPONENTS = ("format", "refuse_iou", "explain", "correction")

# Negative reference for a relevant sample that has no generated sibling refusal.
DEFAULT_REFUSAL_SURROGATE = (
    "The query does not correspond to any moment in the video, "
    "so no timestamp can be given."
)


@dataclass(frozen=True)
class RewardBreakdown:
    """Per-component rewards; total is their exact sum."""
    format: float = 0.0
    refuse_iou: float = 0.0
    explain: float = 0.0
    correction: float = 0.0

    @property
    def total(self) -> float:
        return self.format + self.refuse_iou + self.explain + self.correction

    def to_dict(self) -> Dict[str, float]:
        record = asdict(self)
        record["total"] = self.total
        return record


@dataclass(frozen=True)
class RewardConfig:
    """Which components are active and how broken formats are treated."""
    components: FrozenSet[str] = field(default_factory=lambda: frozenset(REWARD_COMPONENTS))
    strict_format_gating: bool = False

    def __post_init__(self):
        unknown = set(self.components) - set(REWARD_COMPONENTS)
        if unknown:
            raise ConfigError(f"Unknown reward components: {sorted(unknown)}")


@dataclass(frozen=True)
class RewardContext:
    """Everything an objective needs to score one output."""
    sample: GroundingSample
    raw: str
    output: StructuredOutput
    diagnostics: ParseDiagnostics
    embedder: EmbeddingProvider
    has_answer: bool = True
    strict_format_gating: bool = False

    @property
    def format_ok(self) -> bool:
        return self.diagnostics.format_ok


def build_context(sample: GroundingSample, raw: str, embedder: EmbeddingProvider,
                  strict_format_gating: bool = False) -> RewardContext:
    """Parse raw once; on a broken format fall back to best-effort sections."""
    output, diagnostics = parse_output(raw)
    has_answer = output is not None
    if output is None:
        sections = {"think": None, "answer": None, "correct": None}
        if not strict_format_gating:
            sections = extract_sections(raw)
        answer = sections["answer"]
        has_answer = answer is not None
        output = StructuredOutput(
            think=sections["think"] or "",
            answer=answer or "",
            correct=sections["correct"],
            segment=extract_segment(answer) if answer else None,
            raw=raw,
        )
    return RewardContext(sample, raw, output, diagnostics, embedder,
                         has_answer, strict_format_gating)


# ============================================================================
# Component functions
# ============================================================================

def format_reward(raw: str) -> float:
    """1 when the output follows the template exactly, else 0."""
    _, diagnostics = parse_output(raw)
    return 1.0 if diagnostics.format_ok else 0.0


def iou(a: Segment, b: Segment) -> float:
    """Temporal intersection over union of two segments."""
    intersection = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    union = a.length + b.length - intersection
    if union <= 0:
        # Both zero-length: identical points overlap fully.
        return 1.0 if a == b else 0.0
    return intersection / union


def refuse_iou_reward(sample: GroundingSample, out: StructuredOutput) -> float:
    if sample.is_relevant:
        return iou(sample.gt_segment, out.segment) if out.segment is not None else 0.0
    return 1.0 if out.segment is None else 0.0


def similarity(embedder: EmbeddingProvider, a: str, b: str) -> float:
    """Cosine similarity of two texts, provider failures wrapped."""
    try:
        return embedder.similarity(a, b)
    except EmbeddingProviderError:
        raise
    except (ProviderError, ZeroVector, DimensionMismatch) as exc:
        raise EmbeddingProviderError(f"similarity via {embedder.provider_id} failed: {exc}") from exc


def reference_answers(sample: GroundingSample) -> Tuple[str, Optional[str]]:
    """(positive, negative) reference answers for the explain reward.

    The negative is None for an irrelevant sample with no paired segment.
    """
    if sample.is_relevant:
        return sample.gt_segment.render_answer(), sample.paired_refusal or DEFAULT_REFUSAL_SURROGATE
    negative = sample.paired_segment.render_answer() if sample.paired_segment else None
    return sample.gt_refusal, negative


def explain_margin(embedder: EmbeddingProvider, answer: str, positive: str,
                   negative: Optional[str]) -> float:
    """sim(positive, answer) - sim(negative, answer)."""
    if not answer.strip():
        return 0.0
    margin = similarity(embedder, positive, answer)
    if negative is not None:
        margin -= similarity(embedder, negative, answer)
    return margin


def explain_reward(sample: GroundingSample, out: StructuredOutput,
                   embedder: EmbeddingProvider) -> float:
    positive, negative = reference_answers(sample)
    return explain_margin(embedder, out.answer, positive, negative)


def correction_reward(sample: GroundingSample, out: StructuredOutput,
                      embedder: EmbeddingProvider) -> float:
    """Similarity of the reconstructed query to the original. 0 for relevant samples."""
    if sample.is_relevant or not out.correct or not out.correct.strip():
        return 0.0
    return similarity(embedder, sample.original_query, out.correct)


# ============================================================================
# Objective strategies
# ============================================================================

class RewardObjective(ABC):
    """Abstract base class for one reward component."""

    name: str = ""

    @abstractmethod
    def can_apply(self, context: RewardContext) -> bool:
        """Check whether this component scores anything for the context."""

    @abstractmethod
    def apply(self, context: RewardContext) -> float:
        """Score the context."""


class FormatReward(RewardObjective):
    """1 for a well-formed template."""

    name = "format"

    def can_apply(self, context: RewardContext) -> bool:
        return context.format_ok

    def apply(self, context: RewardContext) -> float:
        return 1.0


class _GatedObjective(RewardObjective):
    def can_apply(self, context: RewardContext) -> bool:
        return context.format_ok or not context.strict_format_gating


class RefuseIouReward(_GatedObjective):
    """IoU for grounded relevant queries, 1 for refused irrelevant ones."""

    name = "refuse_iou"

    def can_apply(self, context: RewardContext) -> bool:
        return super().can_apply(context) and context.has_answer

    def apply(self, context: RewardContext) -> float:
        return refuse_iou_reward(context.sample, context.output)


class ExplainReward(_GatedObjective):
    """Similarity margin toward the correct reference answer."""

    name = "explain"

    def can_apply(self, context: RewardContext) -> bool:
        return super().can_apply(context) and context.has_answer

    def apply(self, context: RewardContext) -> float:
        return explain_reward(context.sample, context.output, context.embedder)


class CorrectionReward(_GatedObjective):
    """Similarity of the <correct> section to the original query."""

    name = "correction"

    def apply(self, context: RewardContext) -> float:
        return correction_reward(context.sample, context.output, context.embedder)


OBJECTIVES = (FormatReward, RefuseIouReward, ExplainReward, CorrectionReward)


class RewardChain:
    """Applies every active objective and collects a breakdown."""

    def __init__(self, objectives: List[RewardObjective]):
        self.objectives = objectives

    def apply_all(self, context: RewardContext) -> RewardBreakdown:
        scores = {name: 0.0 for name in REWARD_COMPONENTS}
        for objective in self.objectives:
            if objective.can_apply(context):
                scores[objective.name] = objective.apply(context)
        return RewardBreakdown(**scores)


class RewardEngine:
    """Scores (sample, raw output) pairs with a fixed embedder and config."""

    def __init__(self, embedder: EmbeddingProvider, config: Optional[RewardConfig] = None):
        self.embedder = embedder
        self.config = config or RewardConfig()
        self.chain = RewardChain(
            [cls() for cls in OBJECTIVES if cls.name in self.config.components]
        )

    def score(self, sample: GroundingSample, raw: str) -> RewardBreakdown:
        context = build_context(sample, raw, self.embedder, self.config.strict_format_gating)
        return self.chain.apply_all(context)

    def score_batch(self, samples: Sequence[GroundingSample], outputs: Sequence[str],
                    max_workers: int = 8) -> List[RewardBreakdown]:
        """Score many pairs concurrently; results keep input order."""
        if len(samples) != len(outputs):
            raise InvariantError("batch-length", f"{len(samples)} samples vs {len(outputs)} outputs")
        logger.debug("Scoring %d outputs with %d workers", len(samples), max_workers)
        with ThreadPoolExecutor(max_workers=max(1, max_workers)) as executor:
            return list(executor.map(self.score, samples, outputs))


def total_reward(sample: GroundingSample, raw: str, embedder: EmbeddingProvider,
                 strict_format_gating: bool = False) -> RewardBreakdown:
    """All four components for one output."""
    config = RewardConfig(strict_format_gating=strict_format_gating)
    return RewardEngine(embedder, config).score(sample, raw)


def _component_means(breakdowns: List[RewardBreakdown]) -> Dict[str, float]:
    rows = np.array([[b.format, b.refuse_iou, b.explain, b.correction, b.total] for b in breakdowns])
    means = rows.mean(axis=0)
    summary = {"n": len(breakdowns)}
    summary.update({name: float(value) for name, value in zip(REWARD_COMPONENTS + ("total",), means)})
    return summary


def summarize_breakdowns(breakdowns: Sequence[RewardBreakdown],
                         samples: Sequence[GroundingSample]) -> Dict[str, Optional[Dict[str, float]]]:
    """Mean of each component overall and per relevance class.

    A class with no samples maps to None.
    """
    groups: Dict[str, List[RewardBreakdown]] = {"overall": [], "relevant": [], "irrelevant": []}
    for breakdown, sample in zip(breakdowns, samples):
        groups["overall"].append(breakdown)
        groups["relevant" if sample.is_relevant else "irrelevant"].append(breakdown)
    return {name: _component_means(items) if items else None for name, items in groups.items()}
