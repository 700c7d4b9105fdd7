"""
Tool configuration and provider construction.

Configuration is a YAML file of nested sections; every field has a default,
so the file is optional. Secrets never live in the file: each provider
section names the environment variable holding its API key.
"""

import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Type, TypeVar

import yaml

from errors import ConfigError
from grpo_sim import SimConfig
from providers import (
    EmbeddingProvider,
    HashEmbedder,
    HttpEmbeddingClient,
    HttpLlmClient,
    LlmClient,
    OfflineLlmClient,
    RecordingTransport,
    ReplayTransport,
    RequestsTransport,
    Transport,
)
from rewards import REWARD_COMPONENTS, RewardConfig

logger = logging.getLogger(__name__)

EMBED_KEY_ENV = "RARFT_EMBED_API_KEY"
LLM_KEY_ENV = "RARFT_LLM_API_KEY"

FIXTURE_MODES = ("off", "record", "replay")


@dataclass(frozen=True)
class EmbeddingSettings:
    provider: str = "hash"
    endpoint: str = ""
    model: str = ""
    api_key_env: str = EMBED_KEY_ENV
    dimension: int = 256
    batch_size: int = 64
    timeout: float = 60.0

    def __post_init__(self):
        if self.provider not in ("hash", "http"):
            raise ConfigError(f"embedding.provider must be 'hash' or 'http', got {self.provider!r}")
        if self.provider == "http" and not self.endpoint:
            raise ConfigError("embedding.endpoint is required for the http provider")
        if self.dimension < 1 or self.batch_size < 1:
            raise ConfigError("embedding.dimension and embedding.batch_size must be positive")


@dataclass(frozen=True)
class LlmSettings:
    provider: str = "offline"
    endpoint: str = ""
    model: str = ""
    api_key_env: str = LLM_KEY_ENV
    timeout: float = 60.0
    max_retries: int = 3
    temperature_generation: float = 0.7
    temperature_classification: float = 0.0

    def __post_init__(self):
        if self.provider not in ("offline", "http"):
            raise ConfigError(f"llm.provider must be 'offline' or 'http', got {self.provider!r}")
        if self.provider == "http" and not self.endpoint:
            raise ConfigError("llm.endpoint is required for the http provider")
        if self.max_retries < 1:
            raise ConfigError("llm.max_retries must be at least 1")


@dataclass(frozen=True)
class ConcurrencySettings:
    max_in_flight: int = 8
    workers: int = 8

    def __post_init__(self):
        if self.max_in_flight < 1 or self.workers < 1:
            raise ConfigError("concurrency limits must be positive")


@dataclass(frozen=True)
class FixtureSettings:
    directory: str = ""
    mode: str = "off"

    def __post_init__(self):
        if self.mode not in FIXTURE_MODES:
            raise ConfigError(f"fixtures.mode must be one of {FIXTURE_MODES}, got {self.mode!r}")
        if self.mode != "off" and not self.directory:
            raise ConfigError("fixtures.directory is required when fixtures.mode is not 'off'")


@dataclass(frozen=True)
class RewardSettings:
    components: Tuple[str, ...] = REWARD_COMPONENTS


@dataclass(frozen=True)
class SimulationSettings:
    group_size: int = 8
    beta: float = 0.01
    learning_rate: float = 0.1
    steps: int = 500
    convergence_threshold: float = 0.9


@dataclass(frozen=True)
class ToolConfig:
    """Complete toolkit configuration."""
    seed: int = 7
    strict_format_gating: bool = False
    reward: RewardSettings = field(default_factory=RewardSettings)
    embedding: EmbeddingSettings = field(default_factory=EmbeddingSettings)
    llm: LlmSettings = field(default_factory=LlmSettings)
    concurrency: ConcurrencySettings = field(default_factory=ConcurrencySettings)
    fixtures: FixtureSettings = field(default_factory=FixtureSettings)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)

    def reward_config(self) -> RewardConfig:
        return RewardConfig(frozenset(self.reward.components), self.strict_format_gating)

    def sim_config(self, seed: Optional[int] = None) -> SimConfig:
        sim = self.simulation
        return SimConfig(
            group_size=sim.group_size,
            beta=sim.beta,
            learning_rate=sim.learning_rate,
            steps=sim.steps,
            seed=self.seed if seed is None else seed,
            convergence_threshold=sim.convergence_threshold,
        )


_SECTIONS: Dict[str, type] = {
    "reward": RewardSettings,
    "embedding": EmbeddingSettings,
    "llm": LlmSettings,
    "concurrency": ConcurrencySettings,
    "fixtures": FixtureSettings,
    "simulation": SimulationSettings,
}

T = TypeVar("T")


def _build_section(cls: Type[T], name: str, data: Any) -> T:
    if data is None:
        return cls()
    if not isinstance(data, Mapping):
        raise ConfigError(f"section '{name}' must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {unknown}")
    values = dict(data)
    if "components" in values:
        values["components"] = tuple(values["components"])
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"invalid '{name}' section: {exc}") from exc


def config_from_mapping(data: Optional[Mapping[str, Any]]) -> ToolConfig:
    """Build a ToolConfig, rejecting unknown keys."""
    if data is None:
        return ToolConfig()
    if not isinstance(data, Mapping):
        raise ConfigError("configuration must be a mapping")
    known = {f.name for f in fields(ToolConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {unknown}")
    values: Dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTIONS:
            values[key] = _build_section(_SECTIONS[key], key, value)
        else:
            values[key] = value
    config = ToolConfig(**values)
    # Validates component names and simulation bounds up front.
    try:
        config.reward_config()
        config.sim_config()
    except ValueError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return config


def load_config(path: Optional[Path] = None) -> ToolConfig:
    """Read a YAML configuration file; None yields the defaults."""
    if path is None:
        return ToolConfig()
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    logger.debug("Loaded configuration from %s", path)
    return config_from_mapping(data)


def with_overrides(config: ToolConfig, **overrides: Any) -> ToolConfig:
    """Copy of config with top-level fields replaced."""
    return replace(config, **overrides)


def resolve_api_key(env_name: str) -> str:
    """Read a secret from the environment, failing loudly when unset."""
    value = os.environ.get(env_name, "")
    if not value:
        raise ConfigError(f"environment variable {env_name} is not set")
    return value


class ProviderFactory:
    """Builds embedding and LLM providers from configuration."""

    @staticmethod
    def create_transport(config: ToolConfig) -> Transport:
        fixtures = config.fixtures
        if fixtures.mode == "replay":
            return ReplayTransport(Path(fixtures.directory))
        if fixtures.mode == "record":
            return RecordingTransport(RequestsTransport(), Path(fixtures.directory))
        return RequestsTransport()

    @staticmethod
    def _api_key(config: ToolConfig, env_name: str) -> str:
        # Replayed fixtures never reach the network, so no key is needed.
        if config.fixtures.mode == "replay":
            return os.environ.get(env_name, "")
        return resolve_api_key(env_name)

    @staticmethod
    def create_embedder(config: ToolConfig) -> EmbeddingProvider:
        settings = config.embedding
        if settings.provider == "hash":
            return HashEmbedder(settings.dimension)
        return HttpEmbeddingClient(
            endpoint=settings.endpoint,
            api_key=ProviderFactory._api_key(config, settings.api_key_env),
            model=settings.model,
            batch_size=settings.batch_size,
            transport=ProviderFactory.create_transport(config),
            timeout=settings.timeout,
            max_in_flight=config.concurrency.max_in_flight,
        )

    @staticmethod
    def create_llm(config: ToolConfig) -> LlmClient:
        settings = config.llm
        if settings.provider == "offline":
            return OfflineLlmClient()
        return HttpLlmClient(
            endpoint=settings.endpoint,
            api_key=ProviderFactory._api_key(config, settings.api_key_env),
            model=settings.model,
            timeout=settings.timeout,
            max_retries=settings.max_retries,
            transport=ProviderFactory.create_transport(config),
            max_in_flight=config.concurrency.max_in_flight,
        )
