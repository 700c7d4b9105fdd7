"""
Embedding and LLM providers.

Real providers speak the OpenAI-compatible wire shape over HTTP; the
deterministic doubles (HashEmbedder, OfflineLlmClient) make every code
path runnable offline.
"""

import hashlib
import json
import logging
import re
import threading
import time
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import requests
from tenacity import (
    Retrying,
    before_sleep_log,
    retry_if_exception,
    stop_after_attempt,
    wait_exponential,
)

from errors import (
    AuthError,
    DimensionMismatch,
    EmbeddingProviderError,
    EmptyText,
    LlmClientError,
    ResponseSchemaError,
    TransportError,
    ZeroVector,
)
from factories import TAXONOMY
from prompts import (
    CategoryExtractionPrompt,
    HardNegativePrompt,
    ReasoningConsistencyPrompt,
    RefusalCategoryPrompt,
)

logger = logging.getLogger(__name__)

DEFAULT_DIMENSION = 256
DEFAULT_BATCH_SIZE = 64
DEFAULT_MAX_IN_FLIGHT = 8

_TOKEN_RE = re.compile(r"\w+")


def tokenize(text: str) -> List[str]:
    """Lowercased word tokens."""
    return _TOKEN_RE.findall(text.lower())


def cosine_sim(u: Sequence[float], v: Sequence[float]) -> float:
    """Cosine similarity in [-1, 1]."""
    a = np.asarray(u, dtype=float)
    b = np.asarray(v, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        raise ZeroVector("cosine similarity of a zero vector")
    value = float(np.dot(a, b) / (norm_a * norm_b))
    return max(-1.0, min(1.0, value))


# ============================================================================
# Embedding providers
# ============================================================================

class EmbeddingProvider(ABC):
    """Text to fixed-dimension vector."""

    provider_id: str = ""
    dimension: int = 0

    @abstractmethod
    def embed(self, text: str) -> np.ndarray:
        """Embed a single non-empty text."""

    def embed_many(self, texts: Sequence[str]) -> List[np.ndarray]:
        return [self.embed(text) for text in texts]

    def similarity(self, a: str, b: str) -> float:
        """Cosine similarity of two texts' embeddings."""
        return cosine_sim(self.embed(a), self.embed(b))


class HashEmbedder(EmbeddingProvider):
    """Signed feature hashing of word tokens, L2-normalized.

    Bucket and sign come from SHA-256 of the token, so vectors are stable
    across processes.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.provider_id = f"hash-{dimension}"

    def _accumulate(self, vector: np.ndarray, feature: str) -> None:
        digest = hashlib.sha256(feature.encode("utf-8")).digest()
        index = int.from_bytes(digest[:4], "big") % self.dimension
        vector[index] += 1.0 if digest[4] % 2 == 0 else -1.0

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        vector = np.zeros(self.dimension, dtype=float)
        for token in tokenize(text) or [text.strip()]:
            self._accumulate(vector, token)
        norm = np.linalg.norm(vector)
        if norm == 0:
            # Signed collisions cancelled out; fall back to the whole text.
            self._accumulate(vector, text.strip())
            norm = np.linalg.norm(vector)
        return vector / norm


# ============================================================================
# HTTP transport
# ============================================================================

class Transport(ABC):
    """POST a JSON payload, return (status, decoded body)."""

    @abstractmethod
    def post(self, url: str, payload: Dict[str, Any], headers: Dict[str, str],
             timeout: float) -> Tuple[int, Any]:
        """Send one request."""


class RequestsTransport(Transport):
    """Live transport backed by a requests.Session."""

    def __init__(self, session: Optional[requests.Session] = None):
        self.session = session or requests.Session()

    def post(self, url, payload, headers, timeout):
        try:
            response = self.session.post(url, json=payload, headers=headers, timeout=timeout)
        except requests.RequestException as exc:
            raise TransportError(f"POST {url} failed: {exc}") from exc
        try:
            body = response.json()
        except ValueError:
            body = None
        return response.status_code, body


def fixture_key(url: str, payload: Dict[str, Any]) -> str:
    """Stable fixture file stem for a request."""
    canonical = url + "\n" + json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class RecordingTransport(Transport):
    """Wraps a live transport and writes every exchange to a fixture file."""

    def __init__(self, inner: Transport, directory: Path):
        self.inner = inner
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def post(self, url, payload, headers, timeout):
        status, body = self.inner.post(url, payload, headers, timeout)
        record = {"url": url, "request": payload, "status": status, "body": body}
        path = self.directory / f"{fixture_key(url, payload)}.json"
        path.write_text(json.dumps(record, ensure_ascii=False, indent=2), encoding="utf-8")
        return status, body


class ReplayTransport(Transport):
    """Serves recorded fixtures; never touches the network."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)

    def post(self, url, payload, headers, timeout):
        path = self.directory / f"{fixture_key(url, payload)}.json"
        if not path.exists():
            raise TransportError(f"No replay fixture {path.name} for {url}", retryable=False)
        record = json.loads(path.read_text(encoding="utf-8"))
        return record["status"], record["body"]


def _is_retryable(exc: BaseException) -> bool:
    return isinstance(exc, TransportError) and exc.retryable


class HttpClientBase:
    """Shared POST-with-retry logic for HTTP providers."""

    def __init__(self, endpoint: str, api_key: str, transport: Optional[Transport] = None,
                 timeout: float = 60.0, max_attempts: int = 3, backoff_seconds: float = 0.5,
                 max_in_flight: int = DEFAULT_MAX_IN_FLIGHT):
        self.endpoint = endpoint
        self.api_key = api_key
        self.transport = transport or RequestsTransport()
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_seconds = backoff_seconds
        self._in_flight = threading.BoundedSemaphore(max_in_flight)

    def _post_once(self, payload: Dict[str, Any]) -> Any:
        headers = {"Authorization": f"Bearer {self.api_key}", "Content-Type": "application/json"}
        with self._in_flight:
            status, body = self.transport.post(self.endpoint, payload, headers, self.timeout)
        if status in (401, 403):
            raise AuthError(f"{self.endpoint} rejected credentials (HTTP {status})")
        if status == 429 or status >= 500:
            raise TransportError(f"{self.endpoint} returned HTTP {status}")
        if status >= 400:
            raise TransportError(f"{self.endpoint} returned HTTP {status}", retryable=False)
        return body

    def _post(self, payload: Dict[str, Any]) -> Any:
        retrying = Retrying(
            stop=stop_after_attempt(self.max_attempts),
            wait=wait_exponential(multiplier=self.backoff_seconds, min=self.backoff_seconds),
            retry=retry_if_exception(_is_retryable),
            before_sleep=before_sleep_log(logger, logging.WARNING),
            reraise=True,
        )
        return retrying(self._post_once, payload)


class HttpEmbeddingClient(HttpClientBase, EmbeddingProvider):
    """OpenAI-compatible embeddings endpoint with a per-session cache."""

    def __init__(self, endpoint: str, api_key: str, model: str = "",
                 batch_size: int = DEFAULT_BATCH_SIZE, **kwargs: Any):
        super().__init__(endpoint, api_key, **kwargs)
        self.model = model
        self.batch_size = batch_size
        self.provider_id = f"http:{model}@{endpoint}"
        self.dimension = 0
        self._cache: Dict[Tuple[str, str], np.ndarray] = {}
        self._pending: Dict[Tuple[str, str], threading.Event] = {}
        self._lock = threading.Lock()

    def _key(self, text: str) -> Tuple[str, str]:
        return self.provider_id, hashlib.sha256(text.encode("utf-8")).hexdigest()

    def _parse(self, body: Any, expected: int) -> List[np.ndarray]:
        try:
            items = body["data"]
            if len(items) != expected:
                raise ResponseSchemaError(f"expected {expected} embeddings, got {len(items)}")
            if all("index" in item for item in items):
                items = sorted(items, key=lambda item: item["index"])
            vectors = [np.asarray(item["embedding"], dtype=float) for item in items]
        except (KeyError, TypeError, ValueError) as exc:
            raise ResponseSchemaError(f"malformed embeddings response: {exc}") from exc
        for vector in vectors:
            if vector.ndim != 1 or vector.size == 0 or not np.all(np.isfinite(vector)):
                raise ResponseSchemaError("embedding must be a non-empty finite vector")
        return vectors

    def _fetch(self, texts: List[str]) -> None:
        for offset in range(0, len(texts), self.batch_size):
            batch = texts[offset:offset + self.batch_size]
            payload: Dict[str, Any] = {"input": batch}
            if self.model:
                payload["model"] = self.model
            vectors = self._parse(self._post(payload), len(batch))
            with self._lock:
                for text, vector in zip(batch, vectors):
                    vector.setflags(write=False)
                    self._cache[self._key(text)] = vector
                    self.dimension = vector.size

    def embed_many(self, texts: Sequence[str]) -> List[np.ndarray]:
        for text in texts:
            if not text or not text.strip():
                raise EmptyText("cannot embed empty text")
        unique = list(dict.fromkeys(texts))
        with self._lock:
            to_fetch = [t for t in unique if self._key(t) not in self._cache
                        and self._key(t) not in self._pending]
            waiting = [self._pending[self._key(t)] for t in unique if self._key(t) in self._pending]
            for text in to_fetch:
                self._pending[self._key(text)] = threading.Event()
        try:
            if to_fetch:
                self._fetch(to_fetch)
        finally:
            with self._lock:
                for text in to_fetch:
                    self._pending.pop(self._key(text)).set()
        for event in waiting:
            event.wait()
        with self._lock:
            try:
                return [self._cache[self._key(text)] for text in texts]
            except KeyError as exc:
                raise EmbeddingProviderError("concurrent embedding request failed") from exc

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]


# ============================================================================
# LLM clients
# ============================================================================

class LlmClient(ABC):
    """Chat-style completion client."""

    model_id: str = ""
    timeout: float = 60.0
    max_retries: int = 3

    @abstractmethod
    def complete(self, system_prompt: str, user_payload: str,
                 response_format: str = "json", temperature: float = 0.0) -> str:
        """Return the model's text for one system/user exchange."""


class HttpLlmClient(HttpClientBase, LlmClient):
    """OpenAI-compatible chat completions endpoint."""

    def __init__(self, endpoint: str, api_key: str, model: str = "",
                 timeout: float = 60.0, max_retries: int = 3, **kwargs: Any):
        super().__init__(endpoint, api_key, timeout=timeout, max_attempts=max_retries, **kwargs)
        self.model_id = model
        self.max_retries = max_retries

    def complete(self, system_prompt, user_payload, response_format="json", temperature=0.0):
        payload: Dict[str, Any] = {
            "model": self.model_id,
            "messages": [
                {"role": "system", "content": system_prompt},
                {"role": "user", "content": user_payload},
            ],
            "temperature": temperature,
        }
        if response_format == "json":
            payload["response_format"] = {"type": "json_object"}
        body = self._post(payload)
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ResponseSchemaError(f"malformed chat completion: {exc}") from exc
        if not isinstance(content, str):
            raise ResponseSchemaError("chat completion content is not text")
        return content


class InstrumentedLlmClient(LlmClient):
    """Counts calls and latency of a wrapped client."""

    def __init__(self, inner: LlmClient):
        self.inner = inner
        self.model_id = inner.model_id
        self.timeout = inner.timeout
        self.max_retries = inner.max_retries
        self.calls = 0
        self.failures = 0
        self.total_latency = 0.0
        self._lock = threading.Lock()

    def complete(self, system_prompt, user_payload, response_format="json", temperature=0.0):
        started = time.perf_counter()
        try:
            return self.inner.complete(system_prompt, user_payload, response_format, temperature)
        except Exception:
            with self._lock:
                self.failures += 1
            raise
        finally:
            elapsed = time.perf_counter() - started
            with self._lock:
                self.calls += 1
                self.total_latency += elapsed
            logger.debug("LLM call took %.3fs", elapsed)

    def stats(self) -> Dict[str, float]:
        with self._lock:
            mean = self.total_latency / self.calls if self.calls else 0.0
            return {
                "calls": self.calls,
                "failures": self.failures,
                "total_latency_s": round(self.total_latency, 6),
                "mean_latency_s": round(mean, 6),
            }


# Keyword cues used by the offline client, in diagnostic-strength order.
_CATEGORY_CUES: Tuple[Tuple[str, Tuple[str, ...]], ...] = (
    ("Attribute/Counting", ("one", "two", "three", "four", "five", "twice", "several", "multiple")),
    ("Attribute/AttributeValue", ("red", "blue", "green", "yellow", "black", "white", "small",
                                  "large", "big", "wooden", "metal", "plastic", "round", "wet")),
    ("Attribute/Comparison", ("faster", "slower", "bigger", "smaller", "taller", "shorter", "than")),
    ("Action/ActionSequence", ("then", "after", "before", "while", "first", "finally")),
    ("Object/ObjectSpatialRelation", ("on", "under", "above", "behind", "beside", "next", "left", "right")),
    ("Object/ObjectMoving", ("toward", "towards", "away", "across", "throws", "rolls", "pushes")),
    ("Scene/SceneTransition", ("enters", "leaves", "exits", "moves")),
    ("Scene/SceneExistence", ("kitchen", "park", "room", "street", "beach", "gym", "field", "outside")),
    ("Object/ObjectPartRelation", ("handle", "lid", "wheel", "sleeve", "hat", "his", "her")),
)
_FALLBACK_CATEGORIES = ("Action/FineGrainedAction", "Object/ObjectExistence", "Scene/SceneExistence")

_EDIT_PHRASES: Dict[str, str] = {
    "Action/ActionSequence": "before doing anything else",
    "Action/FineGrainedAction": "slowly in reverse",
    "Object/ObjectExistence": "while holding an umbrella",
    "Object/ObjectPartRelation": "with a detached handle",
    "Object/ObjectSpatialRelation": "underneath the table",
    "Object/ObjectMoving": "as a ball rolls away to the left",
    "Scene/SceneExistence": "on a snowy mountain",
    "Scene/SceneTransition": "just after the scene cuts to a night street",
    "Attribute/AttributeValue": "wearing a bright purple coat",
    "Attribute/Counting": "exactly seven times",
    "Attribute/Comparison": "much faster than the other person",
}


class OfflineLlmClient(LlmClient):
    """Deterministic stand-in that answers the four embedded prompts."""

    def __init__(self):
        self.model_id = "offline"
        self.timeout = 0.0
        self.max_retries = 0
        self._handlers = {
            CategoryExtractionPrompt().build_system_prompt(): self._extract_categories,
            HardNegativePrompt().build_system_prompt(): self._generate_negatives,
            RefusalCategoryPrompt().build_system_prompt(): self._judge_categories,
            ReasoningConsistencyPrompt().build_system_prompt(): self._judge_consistency,
        }

    def complete(self, system_prompt, user_payload, response_format="json", temperature=0.0):
        handler = self._handlers.get(system_prompt)
        if handler is None:
            raise LlmClientError("offline client does not recognise this system prompt")
        return handler(user_payload)

    def _extract_categories(self, user_payload: str) -> str:
        query = json.loads(user_payload)["related_query"]
        tokens = set(tokenize(query))
        eligible, seen = [], set()
        for path, cues in _CATEGORY_CUES:
            hits = sorted(tokens.intersection(cues))
            if hits and path not in seen:
                seen.add(path)
                eligible.append({"path": path, "reason": f"query mentions '{hits[0]}'"})
        for path in _FALLBACK_CATEGORIES:
            if len(eligible) >= 3:
                break
            if path not in seen:
                seen.add(path)
                eligible.append({"path": path, "reason": "generic edit applicable to any query"})
        return json.dumps({"eligible_categories": eligible})

    def _generate_negatives(self, user_payload: str) -> str:
        request = json.loads(user_payload)
        query = request["related_query"].rstrip(". ")
        negs = {}
        for plan in request["plans"]:
            paths = [item["path"] for item in plan["applied_categories"]]
            phrases = [_EDIT_PHRASES[path] for path in paths]
            blocks = [
                "<irrelevant_answer>The query does not match the video: the video never shows "
                f"someone {' and '.join(phrases)}.</irrelevant_answer>"
            ]
            for path in paths:
                tag = TAXONOMY[path].category.tag
                blocks.append(
                    f"<{tag}>{TAXONOMY[path].description} The video does not show "
                    f"anyone {_EDIT_PHRASES[path]}.</{tag}>"
                )
            negs[plan["difficulty"]] = {
                "irrel_query": f"{query} {' and '.join(phrases)}",
                "applied_categories": [{"path": path} for path in paths],
                "reasoning": "\n".join(blocks),
                "difficulty_tag": plan["difficulty"],
            }
        return json.dumps({"negs": negs})

    def _judge_categories(self, user_payload: str) -> str:
        text = user_payload.lower()
        found = []
        for path, definition in TAXONOMY.items():
            cues = (f"<{definition.category.tag}>", path.lower(), _EDIT_PHRASES[path].lower())
            if any(cue in text for cue in cues):
                found.append(path)
        return json.dumps(found)

    def _judge_consistency(self, user_payload: str) -> str:
        generated, _, reference = user_payload.partition(
            "\n\n" + ReasoningConsistencyPrompt.REFERENCE_HEADER + "\n"
        )
        generated = generated.replace(ReasoningConsistencyPrompt.GENERATED_HEADER + "\n", "", 1)
        if generated.strip() == reference.strip():
            return "{'score': 5.0}"
        a, b = set(tokenize(generated)), set(tokenize(reference))
        overlap = len(a & b) / len(a | b) if a | b else 0.0
        return "{'score': %.1f}" % min(4.9, 5.0 * overlap)
