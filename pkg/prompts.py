"""
Embedded prompt resources.

The prompt texts are part of the method: each file is pinned to a SHA-256
digest and any edit is caught by verify_digests().
"""

import hashlib
import json
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Sequence

PROMPT_DIR = Path(__file__).parent / "prompts"

PINNED_DIGESTS: Dict[str, str] = {
    "category_extraction.txt": "9f1cf442f64e0891d30136e803ef24895b8b0f64bca2ecbf7640eca99ea3f07d",
    "hard_negative_generation.txt": "18f2913c2a7b992ac4cb2fed1315fdafd24256f37a7a3933bcce36d80ed7e756",
    "refusal_category_judge.txt": "bf1b30acbe570ccb1632e6801aedf318afbf95109c4a70d5c8a7224b8b906dd9",
    "reasoning_consistency_judge.txt": "699e44c0937662e7b76065e145987f7d633511ab1946eabc83849317434b0332",
}


def file_digest(filename: str) -> str:
    """SHA-256 hex digest of a prompt file's bytes."""
    return hashlib.sha256((PROMPT_DIR / filename).read_bytes()).hexdigest()


def verify_digests() -> Dict[str, bool]:
    """Map each prompt file to whether it still matches its pinned digest."""
    return {name: file_digest(name) == digest for name, digest in PINNED_DIGESTS.items()}


class PromptTemplate(ABC):
    """A system prompt loaded from disk plus a user-payload builder."""

    filename: str = ""

    def __init__(self):
        self._system = (PROMPT_DIR / self.filename).read_text(encoding="utf-8")

    def build_system_prompt(self) -> str:
        return self._system

    @abstractmethod
    def build_prompt(self, **kwargs: Any) -> str:
        """Render the user payload."""


class CategoryExtractionPrompt(PromptTemplate):
    """Multi-label category extraction for a relevant query."""

    filename = "category_extraction.txt"

    def build_prompt(self, related_query: str = "", **kwargs: Any) -> str:
        return json.dumps({"related_query": related_query}, ensure_ascii=False)


class HardNegativePrompt(PromptTemplate):
    """Hard-irrelevant query and refusal generation."""

    filename = "hard_negative_generation.txt"

    def build_prompt(
        self,
        related_query: str = "",
        timestamp: str = "",
        plans: Sequence[Dict[str, Any]] = (),
        video_context: Any = "",
        **kwargs: Any,
    ) -> str:
        payload = {
            "related_query": related_query,
            "related_query_timestamp": timestamp,
            "plans": list(plans),
            "video_context": video_context,
        }
        return json.dumps(payload, ensure_ascii=False)


class RefusalCategoryPrompt(PromptTemplate):
    """Classify which categories a refusal answer cites."""

    filename = "refusal_category_judge.txt"

    def build_prompt(self, response: str = "", **kwargs: Any) -> str:
        return f"Generated Response:\n{response}"


class ReasoningConsistencyPrompt(PromptTemplate):
    """0-5 reasoning consistency judge."""

    filename = "reasoning_consistency_judge.txt"

    GENERATED_HEADER = "Generated Response:"
    REFERENCE_HEADER = "GT Response:"

    def build_prompt(self, generated: str = "", reference: str = "", **kwargs: Any) -> str:
        return f"{self.GENERATED_HEADER}\n{generated}\n\n{self.REFERENCE_HEADER}\n{reference}"


def load_all() -> Dict[str, PromptTemplate]:
    """Instantiate every prompt keyed by file name."""
    prompts: List[PromptTemplate] = [
        CategoryExtractionPrompt(),
        HardNegativePrompt(),
        RefusalCategoryPrompt(),
        ReasoningConsistencyPrompt(),
    ]
    return {prompt.filename: prompt for prompt in prompts}
