"""
Relevance-aware evaluation metrics.

RA-IoU treats a refusal on an irrelevant query as a perfect answer and
anything else on it as a miss; explanation quality (RT-IoU, SBert score,
LLM score) is measured on irrelevant samples only.
"""

import ast
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from pydantic import BaseModel, StrictFloat, StrictInt, StrictStr, TypeAdapter, ValidationError

from errors import (
    DuplicatePrediction,
    EmptyInput,
    InvariantError,
    LlmSchemaError,
    MissingPrediction,
    OutOfRange,
    UnexpectedPrediction,
    UnknownCategory,
)
from models import DifficultyTier, GroundingSample, Relevance, RelevanceCategory, StructuredOutput
from prompts import ReasoningConsistencyPrompt, RefusalCategoryPrompt
from providers import EmbeddingProvider, LlmClient
from rewards import iou, similarity
from template_parser import parse_lenient
from validators import parse_category_path

logger = logging.getLogger(__name__)

RECALL_THRESHOLDS = (0.3, 0.5, 0.7)
LLM_SCORE_RANGE = (0.0, 5.0)
MAX_ATTEMPTS = 2

CSV_COLUMNS = ("R@0.3", "R@0.5", "R@0.7", "mIoU", "F1_relevant", "F1_irrelevant", "F1_average")

_QUOTES = str.maketrans({"“": '"', "”": '"', "‘": "'", "’": "'"})
_DICT_RE = re.compile(r"\{.*?\}", re.DOTALL)
_LIST_RE = re.compile(r"\[.*?\]", re.DOTALL)


@dataclass(frozen=True)
class PredictionRecord:
    """A model output for one sample, leniently parsed."""
    sample_id: str
    raw_output: str
    parsed: Optional[StructuredOutput] = None

    @classmethod
    def from_output(cls, sample_id: str, raw_output: str) -> "PredictionRecord":
        return cls(sample_id, raw_output, parse_lenient(raw_output))

    @property
    def predicted_relevant(self) -> bool:
        return self.parsed is not None and self.parsed.segment is not None

    @property
    def answer(self) -> str:
        return self.parsed.answer if self.parsed is not None else ""


# ============================================================================
# Grounding metrics
# ============================================================================

def ra_iou(sample: GroundingSample, pred: PredictionRecord) -> float:
    """IoU for grounded relevant queries, 1 for refused irrelevant ones, else 0."""
    if sample.is_relevant:
        return iou(sample.gt_segment, pred.parsed.segment) if pred.predicted_relevant else 0.0
    return 0.0 if pred.predicted_relevant else 1.0


def recall_at(scores: Sequence[float], m: float) -> float:
    """Share of scores strictly greater than m."""
    if not scores:
        raise EmptyInput("recall_at needs at least one score")
    if not 0 < m <= 1:
        raise OutOfRange(f"threshold m must be in (0, 1], got {m}")
    return sum(1 for score in scores if score > m) / len(scores)


@dataclass(frozen=True)
class F1Scores:
    relevant: float
    irrelevant: float

    @property
    def average(self) -> float:
        return (self.relevant + self.irrelevant) / 2

    def to_dict(self) -> Dict[str, float]:
        return {"relevant": self.relevant, "irrelevant": self.irrelevant, "average": self.average}


def _binary_f1(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def f1_scores(pairs: Sequence[Tuple[Relevance, bool]]) -> F1Scores:
    """One-vs-rest F1 per class from (gt relevance, predicted relevant) pairs."""
    if not pairs:
        raise EmptyInput("f1_scores needs at least one pair")
    counts = {"tp": 0, "fp": 0, "fn": 0, "tn": 0}
    for gt, predicted_relevant in pairs:
        actual = gt is Relevance.RELEVANT
        if actual and predicted_relevant:
            counts["tp"] += 1
        elif predicted_relevant:
            counts["fp"] += 1
        elif actual:
            counts["fn"] += 1
        else:
            counts["tn"] += 1
    # The irrelevant class swaps the roles of positives and negatives.
    return F1Scores(
        relevant=_binary_f1(counts["tp"], counts["fp"], counts["fn"]),
        irrelevant=_binary_f1(counts["tn"], counts["fn"], counts["fp"]),
    )


def relevance_accuracy(pairs: Sequence[Tuple[Relevance, bool]]) -> Dict[str, Optional[float]]:
    """Fraction of correct relevance decisions overall and per class."""
    if not pairs:
        raise EmptyInput("relevance_accuracy needs at least one pair")

    def share(items: List[bool]) -> Optional[float]:
        return sum(items) / len(items) if items else None

    hits = [(gt, (gt is Relevance.RELEVANT) == predicted) for gt, predicted in pairs]
    return {
        "overall": share([hit for _, hit in hits]),
        "relevant": share([hit for gt, hit in hits if gt is Relevance.RELEVANT]),
        "irrelevant": share([hit for gt, hit in hits if gt is Relevance.IRRELEVANT]),
    }


# ============================================================================
# Explanation metrics
# ============================================================================

def rt_iou(pred_cats: Iterable[RelevanceCategory], gt_cats: Iterable[RelevanceCategory]) -> float:
    """Set IoU of cited versus ground-truth categories."""
    pred, gt = set(pred_cats), set(gt_cats)
    if not gt:
        raise InvariantError("rt-iou-gt", "ground-truth categories must be non-empty")
    if not pred:
        return 0.0
    return len(pred & gt) / len(pred | gt)


_CATEGORY_LIST = TypeAdapter(List[StrictStr])


class ScoreReply(BaseModel):
    """Reasoning-consistency judge reply: {'score': x}."""
    score: Union[StrictInt, StrictFloat]


def _parse_category_reply(text: str) -> FrozenSet[RelevanceCategory]:
    cleaned = text.strip().translate(_QUOTES)
    candidates = [cleaned]
    match = _LIST_RE.search(cleaned)
    if match is not None:
        candidates.append(match.group(0))
    for candidate in candidates:
        try:
            paths = _CATEGORY_LIST.validate_json(candidate)
            break
        except ValidationError:
            continue
    else:
        raise LlmSchemaError(f"judge reply is not a JSON array of category paths: {text[:120]!r}")
    categories = set()
    for path in paths:
        try:
            categories.add(parse_category_path(path))
        except UnknownCategory:
            logger.warning("Judge cited unknown category %r; dropped", path)
    return frozenset(categories)


def _ask_with_retry(llm: LlmClient, system: str, payload: str, parse, label: str):
    for attempt in range(1, MAX_ATTEMPTS + 1):
        reply = llm.complete(system, payload, response_format="text", temperature=0.0)
        try:
            return parse(reply)
        except LlmSchemaError:
            if attempt == MAX_ATTEMPTS:
                raise
            logger.warning("Re-asking %s judge after an unparsable reply", label)
    raise AssertionError("unreachable")


def extract_pred_categories(refusal_text: str, llm: LlmClient) -> FrozenSet[RelevanceCategory]:
    """Categories the refusal text cites, as judged by the LLM."""
    if not refusal_text or not refusal_text.strip():
        raise EmptyInput("refusal text is empty")
    prompt = RefusalCategoryPrompt()
    return _ask_with_retry(llm, prompt.build_system_prompt(), prompt.build_prompt(response=refusal_text),
                           _parse_category_reply, "category")


def sbert_score(generated: str, reference: str, embedder: EmbeddingProvider) -> float:
    """Embedding cosine similarity clamped to [0, 1]."""
    return max(0.0, similarity(embedder, generated, reference))


def parse_llm_score(text: str) -> float:
    """Read {'score': x} from a judge reply."""
    cleaned = text.strip().translate(_QUOTES)
    match = _DICT_RE.search(cleaned)
    if match is None:
        raise LlmSchemaError(f"judge reply has no score dictionary: {text[:120]!r}")
    literal = match.group(0)
    try:
        reply = ast.literal_eval(literal)
    except (ValueError, SyntaxError):
        try:
            reply = json.loads(literal)
        except json.JSONDecodeError as exc:
            raise LlmSchemaError(f"judge score is not a dictionary literal: {literal!r}") from exc
    try:
        return float(ScoreReply.model_validate(reply).score)
    except ValidationError:
        raise LlmSchemaError(f"judge reply lacks a numeric 'score': {literal!r}") from None


def llm_score(generated: str, reference: str, llm: LlmClient) -> float:
    """0-5 reasoning consistency score from the LLM judge."""
    if not generated.strip() or not reference.strip():
        raise EmptyInput("llm_score needs non-empty texts")
    prompt = ReasoningConsistencyPrompt()
    score = _ask_with_retry(llm, prompt.build_system_prompt(),
                            prompt.build_prompt(generated=generated, reference=reference),
                            parse_llm_score, "consistency")
    low, high = LLM_SCORE_RANGE
    if not low <= score <= high:
        raise OutOfRange(f"LLM score {score} outside [{low}, {high}]")
    return score


# ============================================================================
# Report aggregation
# ============================================================================

@dataclass(frozen=True)
class EvalOptions:
    judge: bool = False
    workers: int = 8


@dataclass(frozen=True)
class SampleScores:
    """Metric values for one sample; explanation fields are None when not computed."""
    sample: GroundingSample
    prediction: PredictionRecord
    ra_iou: float
    rt_iou: Optional[float] = None
    sbert: Optional[float] = None
    llm_score: Optional[float] = None


def _mean(values: Iterable[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


@dataclass
class EvalReport:
    """Aggregated evaluation; to_dict() has a fixed key order."""
    n_samples: int
    n_relevant: int
    n_irrelevant: int
    ra_miou: float
    recall_at: Dict[float, float]
    f1: F1Scores
    accuracy: Dict[str, Optional[float]]
    rt_iou_mean: Optional[float] = None
    sbert_mean: Optional[float] = None
    llm_score_mean: Optional[float] = None
    per_tier: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    per_category: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        report: Dict[str, Any] = {
            "n_samples": self.n_samples,
            "n_relevant": self.n_relevant,
            "n_irrelevant": self.n_irrelevant,
            "ra_miou": self.ra_miou,
            "recall_at": {str(m): value for m, value in sorted(self.recall_at.items())},
            "f1": self.f1.to_dict(),
            "accuracy": dict(self.accuracy),
            "explanation": {
                "rt_iou_mean": self.rt_iou_mean,
                "sbert_mean": self.sbert_mean,
                "llm_score_mean": self.llm_score_mean,
            },
        }
        if self.per_tier:
            report["per_tier"] = self.per_tier
        if self.per_category:
            report["per_category"] = self.per_category
        return report

    def csv_row(self) -> Dict[str, float]:
        """Grounding and F1 columns in percent."""
        values = [self.recall_at[m] for m in RECALL_THRESHOLDS] + [
            self.ra_miou, self.f1.relevant, self.f1.irrelevant, self.f1.average,
        ]
        return {column: round(100 * value, 2) for column, value in zip(CSV_COLUMNS, values)}


def check_coverage(dataset: Sequence[GroundingSample], predictions: Sequence[PredictionRecord]) -> None:
    """Every sample needs exactly one prediction and no stray ids."""
    seen: Set[str] = set()
    duplicates: Set[str] = set()
    for pred in predictions:
        if pred.sample_id in seen:
            duplicates.add(pred.sample_id)
        seen.add(pred.sample_id)
    if duplicates:
        raise DuplicatePrediction(duplicates)
    expected = {sample.sample_id for sample in dataset}
    missing = expected - seen
    if missing:
        raise MissingPrediction(missing)
    unexpected = seen - expected
    if unexpected:
        raise UnexpectedPrediction(unexpected)


class ExplanationScorer:
    """Judge-backed explanation metrics for irrelevant samples."""

    def __init__(self, embedder: Optional[EmbeddingProvider], llm: Optional[LlmClient], judge: bool):
        self.embedder = embedder
        self.llm = llm if judge else None

    def score(self, sample: GroundingSample, pred: PredictionRecord) -> SampleScores:
        ra = ra_iou(sample, pred)
        if sample.is_relevant:
            return SampleScores(sample, pred, ra)
        judged = self.llm is not None
        embedded = self.embedder is not None
        answer = pred.answer
        if pred.predicted_relevant or not answer.strip():
            # No refusal to judge.
            return SampleScores(sample, pred, ra,
                                rt_iou=0.0 if judged else None,
                                sbert=0.0 if embedded else None,
                                llm_score=0.0 if judged else None)
        return SampleScores(
            sample, pred, ra,
            rt_iou=rt_iou(extract_pred_categories(answer, self.llm), sample.gt_categories) if judged else None,
            sbert=sbert_score(answer, sample.gt_refusal, self.embedder) if embedded else None,
            llm_score=llm_score(answer, sample.gt_refusal, self.llm) if judged else None,
        )


def _group_summary(rows: List[SampleScores], relevant_rows: List[SampleScores]) -> Dict[str, Any]:
    f1_rows = relevant_rows + rows
    return {
        "n": len(rows),
        "refusal_rate": sum(1 for r in rows if not r.prediction.predicted_relevant) / len(rows),
        "ra_miou": float(np.mean([r.ra_iou for r in rows])),
        "f1": f1_scores([(r.sample.relevance, r.prediction.predicted_relevant) for r in f1_rows]).to_dict(),
        "rt_iou_mean": _mean(r.rt_iou for r in rows),
        "sbert_mean": _mean(r.sbert for r in rows),
        "llm_score_mean": _mean(r.llm_score for r in rows),
    }


def aggregate_report(dataset: Sequence[GroundingSample], predictions: Sequence[PredictionRecord],
                     embedder: Optional[EmbeddingProvider] = None, llm: Optional[LlmClient] = None,
                     options: Optional[EvalOptions] = None) -> EvalReport:
    """Compute every metric over a fully covered prediction set."""
    options = options or EvalOptions()
    if not dataset:
        raise EmptyInput("dataset is empty")
    check_coverage(dataset, predictions)
    if options.judge and llm is None:
        raise InvariantError("judge-llm", "judge metrics requested without an LLM client")

    by_id = {pred.sample_id: pred for pred in predictions}
    ordered = sorted(dataset, key=lambda s: s.sample_id)
    scorer = ExplanationScorer(embedder, llm, options.judge)
    with ThreadPoolExecutor(max_workers=max(1, options.workers)) as executor:
        rows = list(executor.map(lambda s: scorer.score(s, by_id[s.sample_id]), ordered))

    ra_scores = [row.ra_iou for row in rows]
    pairs = [(row.sample.relevance, row.prediction.predicted_relevant) for row in rows]
    relevant_rows = [row for row in rows if row.sample.is_relevant]
    irrelevant_rows = [row for row in rows if not row.sample.is_relevant]

    report = EvalReport(
        n_samples=len(rows),
        n_relevant=len(relevant_rows),
        n_irrelevant=len(irrelevant_rows),
        ra_miou=float(np.mean(ra_scores)),
        recall_at={m: recall_at(ra_scores, m) for m in RECALL_THRESHOLDS},
        f1=f1_scores(pairs),
        accuracy=relevance_accuracy(pairs),
        rt_iou_mean=_mean(row.rt_iou for row in irrelevant_rows),
        sbert_mean=_mean(row.sbert for row in irrelevant_rows),
        llm_score_mean=_mean(row.llm_score for row in irrelevant_rows),
    )

    for tier in DifficultyTier:
        tier_rows = [row for row in irrelevant_rows if row.sample.difficulty is tier]
        if tier_rows:
            report.per_tier[tier.value] = _group_summary(tier_rows, relevant_rows)

    by_category: Dict[str, List[SampleScores]] = {}
    for row in irrelevant_rows:
        for category in row.sample.gt_categories:
            by_category.setdefault(category.path, []).append(row)
    for path in sorted(by_category):
        category_rows = by_category[path]
        report.per_category[path] = {
            "n": len(category_rows),
            "refusal_rate": sum(1 for r in category_rows if not r.prediction.predicted_relevant) / len(category_rows),
            "ra_miou": float(np.mean([r.ra_iou for r in category_rows])),
        }
    return report
