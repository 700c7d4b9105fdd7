"""
Hard-irrelevant dataset construction.

For every relevant (query, segment) sample the builder asks the LLM which
semantic categories could be edited, then generates one hard-irrelevant
query per difficulty tier together with its refusal answer. A shuffled
baseline source pairs queries across videos instead.
"""

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Set, Tuple, Type, TypeVar, Union

import numpy as np
from pydantic import BaseModel, StrictStr, ValidationError

from errors import (
    ConfigError,
    InvariantError,
    LlmSchemaError,
    MissingTier,
    PlanMismatch,
    ToolkitError,
    SchemaError,
    UnknownCategory,
)
from jsonl_io import dumps_record, read_json, write_json
from models import DifficultyTier, GroundingSample, Relevance, RelevanceCategory
from prompts import CategoryExtractionPrompt, HardNegativePrompt
from providers import InstrumentedLlmClient, LlmClient
from validators import parse_category_path, validate_sample

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 2
TOP_K = 3
IRRELEVANT_ANSWER_TAG = "irrelevant_answer"

NEGATIVE_SOURCES = ("hard", "shuffled")
SHUFFLED_REFUSAL = 'The query "{query}" describes a different video; nothing in this video matches it.'
SHUFFLED_CATEGORY = "Scene/SceneExistence"

# Tier names the generation prompt itself uses.
_TIER_ALIASES = {"moderated": DifficultyTier.MODERATE}
_TIER_ORDER = (DifficultyTier.STRONG, DifficultyTier.MODERATE, DifficultyTier.WEAK)
_FENCE_RE = re.compile(r"^```(?:json)?\s*|\s*```$")


def load_llm_json(text: str) -> Any:
    """Decode an LLM JSON reply, tolerating code fences and surrounding prose."""
    cleaned = _FENCE_RE.sub("", text.strip())
    try:
        return json.loads(cleaned)
    except json.JSONDecodeError:
        pass
    for opener, closer in (("{", "}"), ("[", "]")):
        start, end = cleaned.find(opener), cleaned.rfind(closer)
        if start != -1 and end > start:
            try:
                return json.loads(cleaned[start:end + 1])
            except json.JSONDecodeError:
                continue
    raise LlmSchemaError(f"LLM reply is not JSON: {text[:120]!r}")


# ============================================================================
# LLM reply schemas
# ============================================================================

class CategoryEntry(BaseModel):
    path: StrictStr
    reason: str = ""


class CategoryReply(BaseModel):
    """Category extraction reply: {"eligible_categories": [{"path", "reason"}, ...]}."""
    eligible_categories: List[CategoryEntry]


class AppliedCategory(BaseModel):
    path: StrictStr


class NegativeEntry(BaseModel):
    irrel_query: StrictStr
    applied_categories: List[Union[StrictStr, AppliedCategory]]
    reasoning: Union[StrictStr, List[StrictStr]]

    @property
    def echoed_paths(self) -> List[str]:
        return [item if isinstance(item, str) else item.path for item in self.applied_categories]

    @property
    def reasoning_text(self) -> str:
        return self.reasoning if isinstance(self.reasoning, str) else "\n".join(self.reasoning)


class NegsReply(BaseModel):
    """Negative generation reply: {"negs": {tier: entry}}."""
    negs: Dict[str, NegativeEntry]


M = TypeVar("M", bound=BaseModel)


def validate_reply(schema: Type[M], text: str) -> M:
    """Decode an LLM reply and validate it against a reply schema."""
    data = load_llm_json(text)
    try:
        return schema.model_validate(data)
    except ValidationError as exc:
        raise LlmSchemaError(f"{schema.__name__} rejected the reply: {exc}") from None


def _parse_tier(name: str) -> DifficultyTier:
    key = name.strip().lower()
    if key in _TIER_ALIASES:
        return _TIER_ALIASES[key]
    try:
        return DifficultyTier(key)
    except ValueError:
        raise LlmSchemaError(f"unknown difficulty {name!r}") from None


# ============================================================================
# Category extraction
# ============================================================================

@dataclass(frozen=True)
class CategoryPlan:
    """Editable categories for one query, ordered by diagnostic strength."""
    query: str
    eligible: Tuple[Tuple[RelevanceCategory, str], ...]
    incomplete: bool = False

    def __post_init__(self):
        paths = [category.path for category, _ in self.eligible]
        if len(set(paths)) != len(paths):
            raise InvariantError("categories-distinct", "plan repeats a category")

    @property
    def selected_top3(self) -> Tuple[RelevanceCategory, ...]:
        return tuple(category for category, _ in self.eligible[:TOP_K])


@dataclass(frozen=True)
class TierPlan:
    difficulty: DifficultyTier
    categories: Tuple[RelevanceCategory, ...]

    def to_payload(self) -> Dict[str, Any]:
        return {
            "difficulty": self.difficulty.value,
            "applied_categories": [{"path": category.path} for category in self.categories],
        }


def tier_plans(plan: CategoryPlan) -> List[TierPlan]:
    """Prefix-nested plans: strong uses c1, moderate c1-c2, weak c1-c3."""
    top = plan.selected_top3
    return [
        TierPlan(tier, top[:tier.modified_element_count])
        for tier in _TIER_ORDER
        if tier.modified_element_count <= len(top)
    ]


def _collect_categories(reply: CategoryReply, found: Dict[str, Tuple[RelevanceCategory, str]],
                        unknown: List[str]) -> None:
    for item in reply.eligible_categories:
        try:
            category = parse_category_path(item.path)
        except UnknownCategory:
            logger.warning("Dropping unknown category path %r", item.path)
            unknown.append(item.path)
            continue
        if item.path not in found:
            found[item.path] = (category, item.reason)


def extract_categories(query: str, llm: LlmClient, temperature: float = 0.0) -> CategoryPlan:
    """Ask the LLM for editable categories; re-ask once when short or malformed."""
    if not query or not query.strip():
        raise SchemaError("query", "empty")
    prompt = CategoryExtractionPrompt()
    found: Dict[str, Tuple[RelevanceCategory, str]] = {}
    unknown: List[str] = []
    parsed_any = False
    last_error: Optional[LlmSchemaError] = None

    for attempt in range(1, MAX_ATTEMPTS + 1):
        reply_text = llm.complete(prompt.build_system_prompt(), prompt.build_prompt(related_query=query),
                                  response_format="json", temperature=temperature)
        try:
            _collect_categories(validate_reply(CategoryReply, reply_text), found, unknown)
            parsed_any = True
        except LlmSchemaError as exc:
            last_error = exc
            logger.warning("Category extraction reply unusable (attempt %d): %s", attempt, exc)
        if len(found) >= TOP_K:
            break
        if attempt < MAX_ATTEMPTS:
            logger.warning("Re-asking category extraction for %r (%d categories so far)", query, len(found))

    if not parsed_any:
        raise LlmSchemaError(f"category extraction failed after {MAX_ATTEMPTS} attempts: {last_error}")
    if not found:
        if unknown:
            raise UnknownCategory(unknown[0])
        raise LlmSchemaError("category extraction returned no categories")
    incomplete = len(found) < TOP_K
    if incomplete:
        logger.warning("Only %d categories for %r; plan is incomplete", len(found), query)
    return CategoryPlan(query, tuple(found.values()), incomplete)


# ============================================================================
# Negative generation
# ============================================================================

@dataclass(frozen=True)
class NegativeVariant:
    """One hard-irrelevant query with its refusal reasoning."""
    difficulty: DifficultyTier
    irrel_query: str
    applied_categories: Tuple[RelevanceCategory, ...]
    reasoning: str
    irrelevant_answer: str
    category_explanations: Tuple[Tuple[str, str], ...] = ()


@dataclass(frozen=True)
class NegativeBundle:
    """Variants keyed by tier, in strong/moderate/weak order."""
    variants: Tuple[NegativeVariant, ...]

    def get(self, tier: DifficultyTier) -> Optional[NegativeVariant]:
        for variant in self.variants:
            if variant.difficulty is tier:
                return variant
        return None


def _single_block(reasoning: str, tag: str) -> str:
    """Content of the one <tag>...</tag> block, else LlmSchemaError."""
    opens, closes = reasoning.count(f"<{tag}>"), reasoning.count(f"</{tag}>")
    if opens != 1 or closes != 1:
        raise LlmSchemaError(f"reasoning needs exactly one <{tag}> block, found {opens} open/{closes} close")
    start = reasoning.index(f"<{tag}>") + len(tag) + 2
    end = reasoning.index(f"</{tag}>")
    if end < start:
        raise LlmSchemaError(f"<{tag}> block is malformed")
    content = reasoning[start:end].strip()
    if not content:
        raise LlmSchemaError(f"<{tag}> block is empty")
    return content


def _parse_variant(tier_plan: TierPlan, entry: NegativeEntry) -> NegativeVariant:
    if not entry.irrel_query.strip():
        raise LlmSchemaError(f"{tier_plan.difficulty.value}: missing irrel_query")

    echoed = entry.echoed_paths
    expected = [category.path for category in tier_plan.categories]
    if len(echoed) != len(expected) or set(echoed) != set(expected):
        raise PlanMismatch(f"{tier_plan.difficulty.value}: planned {expected}, LLM applied {echoed}")

    reasoning = entry.reasoning_text
    answer = _single_block(reasoning, IRRELEVANT_ANSWER_TAG)
    explanations = tuple(
        (category.path, _single_block(reasoning, category.tag)) for category in tier_plan.categories
    )
    return NegativeVariant(
        difficulty=tier_plan.difficulty,
        irrel_query=entry.irrel_query.strip(),
        applied_categories=tier_plan.categories,
        reasoning=reasoning,
        irrelevant_answer=answer,
        category_explanations=explanations,
    )


def generate_negatives(sample: GroundingSample, plan: CategoryPlan, llm: LlmClient,
                       temperature: float = 0.7) -> NegativeBundle:
    """Generate strong/moderate/weak negatives for a relevant sample."""
    plans = tier_plans(plan)
    if not plans:
        raise InvariantError("plan-nonempty", "category plan has no categories")
    if not sample.is_relevant:
        raise InvariantError("relevance", "negatives are generated from relevant samples only")

    prompt = HardNegativePrompt()
    payload = prompt.build_prompt(
        related_query=sample.query,
        timestamp=f"{sample.gt_segment.start}-{sample.gt_segment.end} second",
        plans=[tier_plan.to_payload() for tier_plan in plans],
        video_context=sample.video_context,
    )

    reply: Optional[NegsReply] = None
    for attempt in range(1, MAX_ATTEMPTS + 1):
        reply_text = llm.complete(prompt.build_system_prompt(), payload,
                                  response_format="json", temperature=temperature)
        try:
            reply = validate_reply(NegsReply, reply_text)
            break
        except LlmSchemaError:
            if attempt == MAX_ATTEMPTS:
                raise
            logger.warning("Re-asking negative generation for %s", sample.sample_id)

    by_tier = {_parse_tier(name): entry for name, entry in reply.negs.items()}

    variants = []
    for tier_plan in plans:
        if tier_plan.difficulty not in by_tier:
            raise MissingTier(tier_plan.difficulty.value)
        variants.append(_parse_variant(tier_plan, by_tier[tier_plan.difficulty]))
    return NegativeBundle(tuple(variants))


def bundle_records(sample: GroundingSample, bundle: NegativeBundle) -> List[Dict[str, Any]]:
    """One relevant record followed by one irrelevant record per tier."""
    sibling = bundle.get(DifficultyTier.STRONG) or bundle.variants[0]
    relevant = sample.to_record()
    relevant["paired_refusal"] = sibling.irrelevant_answer
    records = [relevant]
    for variant in bundle.variants:
        records.append(GroundingSample(
            sample_id=f"{sample.sample_id}::{variant.difficulty.value}",
            video_id=sample.video_id,
            video_context=sample.video_context,
            query=variant.irrel_query,
            relevance=Relevance.IRRELEVANT,
            difficulty=variant.difficulty,
            gt_refusal=variant.irrelevant_answer,
            original_query=sample.query,
            gt_categories=frozenset(variant.applied_categories),
            paired_segment=sample.gt_segment,
        ).to_record())
    for record in records:
        validate_sample(record)
    return records


# ============================================================================
# Shuffled negatives
# ============================================================================

def pair_shuffled(samples: Sequence[GroundingSample], seed: int) -> Dict[str, GroundingSample]:
    """Map each relevant sample id to a relevant sample from another video.

    Partners are drawn in input order from a seeded generator, so a rerun
    with the same corpus and seed pairs identically. Samples whose corpus
    holds no other video get no partner.
    """
    relevant = [s for s in samples if s.is_relevant]
    if len({s.video_id for s in relevant}) < 2:
        return {}
    rng = np.random.default_rng(seed)
    partners: Dict[str, GroundingSample] = {}
    for sample in relevant:
        while True:
            donor = relevant[int(rng.integers(len(relevant)))]
            if donor.video_id != sample.video_id:
                break
        partners[sample.sample_id] = donor
    return partners


def shuffled_records(sample: GroundingSample, donor: GroundingSample) -> List[Dict[str, Any]]:
    """The relevant record plus one irrelevant record carrying the donor's query."""
    refusal = SHUFFLED_REFUSAL.format(query=donor.query.strip())
    relevant = sample.to_record()
    relevant["paired_refusal"] = refusal
    # A query lifted from another video mismatches the whole scene.
    negative = GroundingSample(
        sample_id=f"{sample.sample_id}::shuffled",
        video_id=sample.video_id,
        video_context=sample.video_context,
        query=donor.query,
        relevance=Relevance.IRRELEVANT,
        difficulty=DifficultyTier.STRONG,
        gt_refusal=refusal,
        original_query=sample.query,
        gt_categories=frozenset({parse_category_path(SHUFFLED_CATEGORY)}),
        paired_segment=sample.gt_segment,
    ).to_record()
    records = [relevant, negative]
    for record in records:
        validate_sample(record)
    return records


# ============================================================================
# Build run
# ============================================================================

@dataclass
class BuildReport:
    """Outcome of one build run."""
    input_samples: int = 0
    relevant_written: int = 0
    irrelevant_written: int = 0
    per_tier: Dict[str, int] = field(default_factory=lambda: {t.value: 0 for t in _TIER_ORDER})
    resumed: int = 0
    skipped: List[Dict[str, str]] = field(default_factory=list)
    incomplete_plans: List[str] = field(default_factory=list)
    llm: Dict[str, float] = field(default_factory=dict)
    output_path: str = ""
    negatives: str = "hard"

    @property
    def completed(self) -> int:
        return self.relevant_written

    @property
    def has_skips(self) -> bool:
        return bool(self.skipped)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "output_path": self.output_path,
            "negatives": self.negatives,
            "input_samples": self.input_samples,
            "completed": self.completed,
            "resumed": self.resumed,
            "relevant_written": self.relevant_written,
            "irrelevant_written": self.irrelevant_written,
            "per_tier": dict(self.per_tier),
            "skipped": list(self.skipped),
            "incomplete_plans": list(self.incomplete_plans),
            "llm": dict(self.llm),
        }


@dataclass
class _SampleResult:
    sample_id: str
    records: List[Dict[str, Any]] = field(default_factory=list)
    incomplete: bool = False
    error: str = ""


def read_checkpoint(path: Path) -> Set[str]:
    """Completed sample ids recorded by a previous run."""
    if not Path(path).exists():
        return set()
    data = read_json(path)
    if not isinstance(data, Mapping) or not isinstance(data.get("completed"), list):
        raise SchemaError(str(path), "checkpoint must be {\"completed\": [...]}")
    return set(data["completed"])


class DatasetBuilder:
    """Runs category extraction and negative generation over a corpus.

    negatives="hard" asks the LLM for strong/moderate/weak edits of each
    query; negatives="shuffled" pairs each query with one from another
    video and makes no LLM calls.
    """

    def __init__(self, llm: LlmClient, workers: int = 8,
                 temperature_generation: float = 0.7, temperature_classification: float = 0.0,
                 negatives: str = "hard", seed: int = 7):
        if negatives not in NEGATIVE_SOURCES:
            raise ConfigError(f"negatives must be one of {NEGATIVE_SOURCES}, got {negatives!r}")
        self.llm = llm if isinstance(llm, InstrumentedLlmClient) else InstrumentedLlmClient(llm)
        self.workers = max(1, workers)
        self.temperature_generation = temperature_generation
        self.temperature_classification = temperature_classification
        self.negatives = negatives
        self.seed = seed
        self._partners: Dict[str, GroundingSample] = {}

    def process(self, sample: GroundingSample) -> _SampleResult:
        """Build all records for one sample; failures become a skip reason."""
        if not sample.is_relevant:
            return _SampleResult(sample.sample_id, error="input sample is not relevant")
        if self.negatives == "shuffled":
            donor = self._partners.get(sample.sample_id)
            if donor is None:
                logger.warning("Skipping %s: no other video to take a query from", sample.sample_id)
                return _SampleResult(sample.sample_id, error="no query from another video to pair with")
            return _SampleResult(sample.sample_id, shuffled_records(sample, donor))
        try:
            plan = extract_categories(sample.query, self.llm, self.temperature_classification)
            bundle = generate_negatives(sample, plan, self.llm, self.temperature_generation)
            records = bundle_records(sample, bundle)
        except ToolkitError as exc:
            logger.warning("Skipping %s: %s: %s", sample.sample_id, type(exc).__name__, exc)
            return _SampleResult(sample.sample_id, error=f"{type(exc).__name__}: {exc}")
        return _SampleResult(sample.sample_id, records, plan.incomplete)

    def build(self, samples: Sequence[GroundingSample], out_path: Path,
              checkpoint_path: Optional[Path] = None, resume: bool = False) -> BuildReport:
        out_path = Path(out_path)
        checkpoint_path = Path(checkpoint_path or f"{out_path}.checkpoint.json")
        completed = read_checkpoint(checkpoint_path) if resume else set()
        pending = [s for s in samples if s.sample_id not in completed]
        if self.negatives == "shuffled":
            self._partners = pair_shuffled(samples, self.seed)

        report = BuildReport(input_samples=len(samples), output_path=str(out_path), negatives=self.negatives)
        report.resumed = len(samples) - len(pending)
        if report.resumed:
            logger.info("Resuming: %d samples already completed", report.resumed)
        elif resume:
            logger.warning("No completed samples in %s; rebuilding %s from scratch", checkpoint_path, out_path)

        out_path.parent.mkdir(parents=True, exist_ok=True)
        # Append only behind checkpointed samples; otherwise start the file over.
        mode = "a" if completed else "w"
        done = sorted(completed)
        with out_path.open(mode, encoding="utf-8") as handle, \
                ThreadPoolExecutor(max_workers=self.workers) as executor:
            # map() yields in input order, so this loop is the single writer.
            for result in executor.map(self.process, pending):
                if result.error:
                    report.skipped.append({"sample_id": result.sample_id, "reason": result.error})
                    continue
                for record in result.records:
                    handle.write(dumps_record(record) + "\n")
                    if record["relevance"] == Relevance.RELEVANT.value:
                        report.relevant_written += 1
                    else:
                        report.irrelevant_written += 1
                        report.per_tier[record["difficulty"]] += 1
                handle.flush()
                if result.incomplete:
                    report.incomplete_plans.append(result.sample_id)
                done.append(result.sample_id)
                write_json(checkpoint_path, {"completed": done})

        report.llm = self.llm.stats()
        logger.info(
            "Build finished: %d relevant, %d irrelevant, %d skipped",
            report.relevant_written, report.irrelevant_written, len(report.skipped),
        )
        return report


def build_dataset(samples: Sequence[GroundingSample], llm: LlmClient, out_path: Path,
                  checkpoint_path: Optional[Path] = None, resume: bool = False,
                  workers: int = 8, negatives: str = "hard", seed: int = 7) -> BuildReport:
    """Build the irrelevant-query dataset with default temperatures."""
    builder = DatasetBuilder(llm, workers=workers, negatives=negatives, seed=seed)
    return builder.build(samples, out_path, checkpoint_path, resume)
