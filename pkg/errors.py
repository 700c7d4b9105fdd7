"""
Exception hierarchy for the refusal-aware VTG toolkit.
"""

from typing import Iterable, List


class ToolkitError(Exception):
    """Base class for every toolkit error."""


class UnknownCategory(ToolkitError, ValueError):
    """A category path is not one of the 11 taxonomy leaves."""

    def __init__(self, path: str):
        super().__init__(f"Unknown category path: {path!r}")
        self.path = path


class SchemaError(ToolkitError, ValueError):
    """A dataset record is missing a field or carries a malformed one."""

    def __init__(self, field: str, detail: str = ""):
        message = f"Schema error in field '{field}'"
        if detail:
            message += f": {detail}"
        super().__init__(message)
        self.field = field


class InvariantError(ToolkitError, ValueError):
    """A value is well-typed but violates a domain invariant."""

    def __init__(self, invariant: str, detail: str = ""):
        message = f"Invariant violated ({invariant})"
        if detail:
            message += f": {detail}"
        super().__init__(message)
        self.invariant = invariant


class ConfigError(ToolkitError):
    """Invalid configuration or unresolved secret."""


# Providers

class ProviderError(ToolkitError):
    """Failure talking to an embedding or LLM provider."""


class EmbeddingProviderError(ProviderError):
    """An embedding provider could not produce a vector."""


class EmptyText(EmbeddingProviderError, ValueError):
    """Empty text was passed to an embedder."""


class LlmClientError(ProviderError):
    """An LLM client could not produce a completion."""


class AuthError(ProviderError):
    """The provider rejected the credentials (never retried)."""


class TransportError(ProviderError):
    """Network failure or retryable server error."""

    def __init__(self, message: str, retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


class ResponseSchemaError(ProviderError):
    """The provider answered with an unexpected payload shape."""


class ZeroVector(ToolkitError, ValueError):
    """Cosine similarity is undefined for a zero vector."""


class DimensionMismatch(ToolkitError, ValueError):
    """Two vectors have different dimensions."""


# Dataset construction

class LlmSchemaError(ToolkitError):
    """LLM output could not be parsed into the expected JSON shape."""


class PlanMismatch(ToolkitError):
    """Categories echoed by the LLM differ from the requested plan."""


class MissingTier(ToolkitError):
    """A planned difficulty tier is absent from the LLM response."""

    def __init__(self, tier: str):
        super().__init__(f"Missing difficulty tier in response: {tier}")
        self.tier = tier


# GRPO simulation

class GroupTooSmall(ToolkitError, ValueError):
    """A response group needs at least two members."""


class UnknownResponse(ToolkitError, KeyError):
    """A response is not part of the policy's candidate alphabet."""


class AlphabetMismatch(ToolkitError, ValueError):
    """Two policies are defined over different alphabets."""


# Metrics

class EmptyInput(ToolkitError, ValueError):
    """A metric was asked to aggregate zero items."""


class OutOfRange(ToolkitError, ValueError):
    """A judge score falls outside the accepted range."""


class _IdListError(ToolkitError):
    def __init__(self, label: str, ids: Iterable[str]):
        self.ids: List[str] = sorted(ids)
        super().__init__(f"{label}: {', '.join(self.ids)}")


class MissingPrediction(_IdListError):
    """Some dataset samples have no prediction."""

    def __init__(self, ids: Iterable[str]):
        super().__init__("Missing predictions for sample ids", ids)


class DuplicatePrediction(_IdListError):
    """Some sample ids have more than one prediction."""

    def __init__(self, ids: Iterable[str]):
        super().__init__("Duplicate predictions for sample ids", ids)


class UnexpectedPrediction(_IdListError):
    """Predictions reference sample ids absent from the dataset."""

    def __init__(self, ids: Iterable[str]):
        super().__init__("Predictions for unknown sample ids", ids)
