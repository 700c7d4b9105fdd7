"""
Pytest configuration and fixtures.
This file ensures that pytest can find all modules correctly and provides
deterministic, network-free providers shared by the test suites.
"""

import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pytest

# Add the project root to Python path
project_root = Path(__file__).parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

from providers import EmbeddingProvider, HashEmbedder, LlmClient, OfflineLlmClient, Transport  # noqa: E402
from validators import validate_sample  # noqa: E402


class LookupEmbedder(EmbeddingProvider):
    """Returns hand-picked vectors for known texts, hashed vectors otherwise."""

    def __init__(self, vectors: Dict[str, Sequence[float]], dimension: int = 8):
        self.vectors = {text: np.asarray(v, dtype=float) for text, v in vectors.items()}
        self.dimension = dimension
        self.provider_id = "lookup"
        self._fallback = HashEmbedder(dimension)

    def embed(self, text: str) -> np.ndarray:
        if text in self.vectors:
            return self.vectors[text]
        return self._fallback.embed(text)


class ScriptedLlm(LlmClient):
    """Replies from a script; a reply may be text, an exception, or a callable."""

    def __init__(self, replies: Sequence[Union[str, Exception, Callable[[str, str], str]]]):
        self.replies = list(replies)
        self.calls: List[Tuple[str, str]] = []
        self.model_id = "scripted"

    def complete(self, system_prompt, user_payload, response_format="json", temperature=0.0):
        self.calls.append((system_prompt, user_payload))
        reply = self.replies.pop(0) if len(self.replies) > 1 else self.replies[0]
        if isinstance(reply, Exception):
            raise reply
        if callable(reply):
            return reply(system_prompt, user_payload)
        return reply


class FakeTransport(Transport):
    """Scripted (status, body) responses; records every request."""

    def __init__(self, responses: Sequence[Union[Tuple[int, object], Exception]]):
        self.responses = list(responses)
        self.requests: List[dict] = []

    def post(self, url, payload, headers, timeout):
        self.requests.append({"url": url, "payload": payload, "headers": headers})
        response = self.responses.pop(0) if len(self.responses) > 1 else self.responses[0]
        if isinstance(response, Exception):
            raise response
        return response


def basis(index: int, dimension: int = 8) -> List[float]:
    vector = [0.0] * dimension
    vector[index] = 1.0
    return vector


@pytest.fixture
def hash_embedder():
    return HashEmbedder()


@pytest.fixture
def offline_llm():
    return OfflineLlmClient()


@pytest.fixture
def lookup_embedder():
    """Factory for LookupEmbedder instances."""
    return LookupEmbedder


@pytest.fixture
def scripted_llm():
    """Factory for ScriptedLlm instances."""
    return ScriptedLlm


@pytest.fixture
def fake_transport():
    """Factory for FakeTransport instances."""
    return FakeTransport


@pytest.fixture
def unit_vector():
    return basis


@pytest.fixture
def make_relevant():
    """Build a validated relevant sample."""

    def _make(sample_id: str = "vid-1", segment=(4.0, 8.0), query: str = "A man slices bread.",
              paired_refusal: Optional[str] = None, **extra):
        record = {
            "sample_id": sample_id,
            "video_id": extra.pop("video_id", "video-1"),
            "video_context": extra.pop("video_context", "A man slices bread in a kitchen."),
            "query": query,
            "relevance": "relevant",
            "gt_segment": list(segment),
        }
        if paired_refusal is not None:
            record["paired_refusal"] = paired_refusal
        record.update(extra)
        return validate_sample(record)

    return _make


@pytest.fixture
def make_irrelevant():
    """Build a validated irrelevant sample."""

    def _make(sample_id: str = "vid-1::strong", difficulty: str = "strong",
              categories=("Object/ObjectExistence",),
              gt_refusal: str = "The man slices bread, not a watermelon.",
              original_query: str = "A man slices bread.",
              query: str = "A man slices a watermelon.",
              paired_segment=None, **extra):
        record = {
            "sample_id": sample_id,
            "video_id": extra.pop("video_id", "video-1"),
            "video_context": extra.pop("video_context", "A man slices bread in a kitchen."),
            "query": query,
            "relevance": "irrelevant",
            "difficulty": difficulty,
            "gt_refusal": gt_refusal,
            "original_query": original_query,
            "gt_categories": list(categories),
        }
        if paired_segment is not None:
            record["paired_segment"] = list(paired_segment)
        record.update(extra)
        return validate_sample(record)

    return _make
