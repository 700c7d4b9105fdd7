"""
Group-relative policy optimization on a finite response alphabet.

The policy is a softmax over a fixed set of candidate raw outputs, so the
surrogate objective, the KL regularizer and their gradients are exact.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml

from errors import (
    AlphabetMismatch,
    ConfigError,
    GroupTooSmall,
    InvariantError,
    SchemaError,
    UnknownResponse,
)
from models import GroundingSample
from providers import HashEmbedder
from rewards import RewardEngine
from validators import validate_sample

logger = logging.getLogger(__name__)

ZERO_VARIANCE_EPS = 1e-12
MIN_CANDIDATES = 4
MAX_CANDIDATES = 16

BUNDLED_SCENARIO_DIR = Path(__file__).parent / "scenarios"


@dataclass(frozen=True)
class SimConfig:
    """Hyperparameters of one simulation run."""
    group_size: int = 8
    beta: float = 0.01
    learning_rate: float = 0.1
    steps: int = 500
    seed: int = 7
    convergence_threshold: float = 0.9

    def __post_init__(self):
        if self.group_size < 2:
            raise GroupTooSmall(f"group_size must be >= 2, got {self.group_size}")
        if self.beta < 0:
            raise InvariantError("sim-config", "beta must be non-negative")
        if self.learning_rate <= 0:
            raise InvariantError("sim-config", "learning_rate must be positive")
        if self.steps < 1:
            raise InvariantError("sim-config", "steps must be positive")
        if not 0 < self.convergence_threshold <= 1:
            raise InvariantError("sim-config", "convergence_threshold must be in (0, 1]")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - np.max(logits))
    return shifted / shifted.sum()


class ToyPolicy:
    """Softmax distribution over a fixed alphabet of candidate responses."""

    def __init__(self, alphabet: Sequence[str], logits: Optional[Sequence[float]] = None):
        self.alphabet: Tuple[str, ...] = tuple(alphabet)
        if len(set(self.alphabet)) != len(self.alphabet):
            raise InvariantError("alphabet-distinct", "candidate responses must be distinct")
        if logits is None:
            logits = np.zeros(len(self.alphabet))
        self.logits = np.array(logits, dtype=float)
        if self.logits.shape != (len(self.alphabet),):
            raise InvariantError("logits-shape", "one logit per candidate response")
        self._index = {response: i for i, response in enumerate(self.alphabet)}

    @classmethod
    def uniform(cls, alphabet: Sequence[str]) -> "ToyPolicy":
        return cls(alphabet)

    @property
    def probabilities(self) -> np.ndarray:
        return softmax(self.logits)

    def index(self, response: str) -> int:
        try:
            return self._index[response]
        except KeyError:
            raise UnknownResponse(f"response not in the candidate alphabet: {response[:60]!r}") from None

    def probability(self, response: str) -> float:
        return float(self.probabilities[self.index(response)])

    def with_logits(self, logits: np.ndarray) -> "ToyPolicy":
        return ToyPolicy(self.alphabet, logits)

    def copy(self) -> "ToyPolicy":
        return self.with_logits(self.logits.copy())


def normalize_advantages(rewards: Sequence[float]) -> List[float]:
    """Group-relative advantages (r - mean) / std with population std.

    An all-tie group (std < 1e-12) yields all-zero advantages.
    """
    if len(rewards) < 2:
        raise GroupTooSmall(f"a group needs at least 2 rewards, got {len(rewards)}")
    values = np.asarray(rewards, dtype=float)
    std = values.std()
    if std < ZERO_VARIANCE_EPS:
        return [0.0] * len(values)
    return ((values - values.mean()) / std).tolist()


@dataclass(frozen=True)
class ResponseGroup:
    """G sampled responses with their rewards and advantages."""
    responses: Tuple[str, ...]
    rewards: Tuple[float, ...]
    advantages: Tuple[float, ...]

    def __post_init__(self):
        if len(self.responses) < 2:
            raise GroupTooSmall(f"a group needs at least 2 responses, got {len(self.responses)}")
        if not len(self.responses) == len(self.rewards) == len(self.advantages):
            raise InvariantError("group-length", "responses, rewards and advantages differ in length")

    @classmethod
    def from_rewards(cls, responses: Sequence[str], rewards: Sequence[float]) -> "ResponseGroup":
        return cls(tuple(responses), tuple(float(r) for r in rewards),
                   tuple(normalize_advantages(rewards)))

    @property
    def is_degenerate(self) -> bool:
        return not any(self.advantages)


def _indices(policy: ToyPolicy, responses: Sequence[str]) -> np.ndarray:
    return np.array([policy.index(response) for response in responses], dtype=int)


def _check_alphabets(a: ToyPolicy, b: ToyPolicy) -> None:
    if a.alphabet != b.alphabet:
        raise AlphabetMismatch("policies are defined over different candidate alphabets")


def surrogate_value(policy: ToyPolicy, old: ToyPolicy, group: ResponseGroup) -> float:
    """Sum of probability ratios times advantages (no clipping)."""
    _check_alphabets(policy, old)
    idx = _indices(policy, group.responses)
    ratios = policy.probabilities[idx] / old.probabilities[idx]
    return float(np.dot(ratios, group.advantages))


def kl_divergence(policy: ToyPolicy, ref: ToyPolicy) -> float:
    """Exact forward KL(policy || ref) over the alphabet."""
    _check_alphabets(policy, ref)
    p, q = policy.probabilities, ref.probabilities
    return float(np.sum(p * (np.log(p) - np.log(q))))


def objective(policy: ToyPolicy, old: ToyPolicy, ref: ToyPolicy,
              group: ResponseGroup, beta: float) -> float:
    return surrogate_value(policy, old, group) - beta * kl_divergence(policy, ref)


def objective_gradient(policy: ToyPolicy, old: ToyPolicy, ref: ToyPolicy,
                       group: ResponseGroup, beta: float) -> np.ndarray:
    """Analytic gradient of the objective with respect to the policy logits."""
    _check_alphabets(policy, old)
    _check_alphabets(policy, ref)
    p = policy.probabilities
    # Surrogate = sum_k c_k p_k where c_k collects A_i / p_old(k) per candidate.
    idx = _indices(policy, group.responses)
    weights = np.zeros_like(p)
    np.add.at(weights, idx, np.asarray(group.advantages) / old.probabilities[idx])
    surrogate_grad = p * (weights - np.dot(weights, p))

    log_ratio = np.log(p) - np.log(ref.probabilities)
    kl = float(np.dot(p, log_ratio))
    kl_grad = p * (log_ratio - kl)
    return surrogate_grad - beta * kl_grad


def gradient_step(policy: ToyPolicy, old: ToyPolicy, ref: ToyPolicy,
                  group: ResponseGroup, config: SimConfig) -> ToyPolicy:
    """One gradient-ascent step on the logits."""
    grad = objective_gradient(policy, old, ref, group, config.beta)
    return policy.with_logits(policy.logits + config.learning_rate * grad)


# ============================================================================
# Scenarios
# ============================================================================

@dataclass(frozen=True)
class Candidate:
    """A named raw model output."""
    name: str
    output: str


@dataclass(frozen=True)
class ScenarioSpec:
    """One sample and the finite set of outputs the policy chooses from."""
    name: str
    sample: GroundingSample
    candidates: Tuple[Candidate, ...]
    description: str = ""

    def __post_init__(self):
        if not MIN_CANDIDATES <= len(self.candidates) <= MAX_CANDIDATES:
            raise InvariantError(
                "scenario-candidates",
                f"{self.name}: need {MIN_CANDIDATES}-{MAX_CANDIDATES} candidates, got {len(self.candidates)}",
            )
        names = [c.name for c in self.candidates]
        if len(set(names)) != len(names):
            raise InvariantError("scenario-candidates", f"{self.name}: candidate names must be distinct")

    @property
    def alphabet(self) -> Tuple[str, ...]:
        return tuple(c.output for c in self.candidates)

    @property
    def candidate_names(self) -> Tuple[str, ...]:
        return tuple(c.name for c in self.candidates)


def scenario_from_mapping(data: Mapping[str, Any], source: str = "<mapping>") -> ScenarioSpec:
    if not isinstance(data, Mapping):
        raise SchemaError("scenario", f"{source}: expected a mapping")
    for key in ("name", "sample", "candidates"):
        if key not in data:
            raise SchemaError(key, f"{source}: missing")
    candidates = data["candidates"]
    if not isinstance(candidates, list):
        raise SchemaError("candidates", f"{source}: expected a list")
    parsed = []
    for i, item in enumerate(candidates):
        if not isinstance(item, Mapping) or not isinstance(item.get("output"), str):
            raise SchemaError("candidates", f"{source}: candidate {i} needs a text 'output'")
        parsed.append(Candidate(str(item.get("name", f"candidate_{i}")), item["output"]))
    return ScenarioSpec(
        name=str(data["name"]),
        sample=validate_sample(data["sample"]),
        candidates=tuple(parsed),
        description=str(data.get("description", "")),
    )


def load_scenario(path: Path) -> ScenarioSpec:
    """Read a scenario YAML file."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return scenario_from_mapping(data, str(path))


class ScenarioFactory:
    """Factory for the scenarios bundled with the toolkit."""

    @staticmethod
    def create_all() -> Dict[str, ScenarioSpec]:
        scenarios = {}
        for path in sorted(BUNDLED_SCENARIO_DIR.glob("*.yaml")):
            scenario = load_scenario(path)
            scenarios[scenario.name] = scenario
        return scenarios

    @staticmethod
    def resolve(name_or_path: str) -> ScenarioSpec:
        """A bundled scenario by name, or a scenario file by path."""
        bundled = BUNDLED_SCENARIO_DIR / f"{name_or_path}.yaml"
        if bundled.exists():
            return load_scenario(bundled)
        path = Path(name_or_path)
        if not path.exists():
            raise ConfigError(f"Scenario not found: {name_or_path}")
        return load_scenario(path)


# ============================================================================
# Simulation
# ============================================================================

@dataclass(frozen=True)
class StepRecord:
    step: int
    mean_reward: float
    kl: float
    policy_probs: Tuple[float, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "step": self.step,
            "mean_reward": self.mean_reward,
            "kl": self.kl,
            "policy_probs": list(self.policy_probs),
        }


@dataclass
class SimulationTrace:
    """Per-step history plus the convergence verdict."""
    scenario: str
    config: SimConfig
    candidate_names: Tuple[str, ...]
    candidate_rewards: Tuple[float, ...]
    steps: List[StepRecord] = field(default_factory=list)
    zero_variance_groups: int = 0
    first_converged_step: Optional[int] = None

    @property
    def initial_probs(self) -> Tuple[float, ...]:
        n = len(self.candidate_names)
        return tuple([1.0 / n] * n)

    @property
    def final_probs(self) -> Tuple[float, ...]:
        return self.steps[-1].policy_probs if self.steps else self.initial_probs

    @property
    def reward_argmax(self) -> Optional[int]:
        """Index of the unique strictly maximal-reward candidate, if any."""
        best = max(self.candidate_rewards)
        winners = [i for i, r in enumerate(self.candidate_rewards) if r == best]
        return winners[0] if len(winners) == 1 else None

    @property
    def policy_argmax(self) -> int:
        return int(np.argmax(self.final_probs))

    @property
    def has_learning_signal(self) -> bool:
        return len(set(self.candidate_rewards)) > 1

    def converged_at(self, probs: Sequence[float]) -> bool:
        target = self.reward_argmax
        return (
            target is not None
            and int(np.argmax(probs)) == target
            and probs[target] >= self.config.convergence_threshold
        )

    @property
    def converged(self) -> bool:
        return self.converged_at(self.final_probs)

    def total_variation_from_initial(self) -> float:
        return 0.5 * float(np.sum(np.abs(np.array(self.final_probs) - np.array(self.initial_probs))))

    def to_records(self) -> List[Dict[str, Any]]:
        return [record.to_dict() for record in self.steps]

    def summary(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario,
            "seed": self.config.seed,
            "steps": len(self.steps),
            "candidates": [
                {"name": name, "reward": reward, "final_prob": prob}
                for name, reward, prob in zip(self.candidate_names, self.candidate_rewards, self.final_probs)
            ],
            "reward_argmax": None if self.reward_argmax is None else self.candidate_names[self.reward_argmax],
            "policy_argmax": self.candidate_names[self.policy_argmax],
            "converged": self.converged,
            "first_converged_step": self.first_converged_step,
            "zero_variance_groups": self.zero_variance_groups,
            "learning_signal": self.has_learning_signal,
        }


def run_simulation(config: SimConfig, scenario: ScenarioSpec,
                   engine: Optional[RewardEngine] = None) -> SimulationTrace:
    """Train the toy policy on one scenario. Deterministic given config.seed."""
    engine = engine or RewardEngine(HashEmbedder())
    alphabet = scenario.alphabet
    # Rewards are deterministic per candidate, so score each once.
    candidate_rewards = np.array([engine.score(scenario.sample, raw).total for raw in alphabet])

    rng = np.random.default_rng(config.seed)
    policy = ToyPolicy.uniform(alphabet)
    ref = policy.copy()
    trace = SimulationTrace(
        scenario=scenario.name,
        config=config,
        candidate_names=scenario.candidate_names,
        candidate_rewards=tuple(float(r) for r in candidate_rewards),
    )

    for step in range(1, config.steps + 1):
        old = policy.copy()
        picks = rng.choice(len(alphabet), size=config.group_size, p=old.probabilities)
        rewards = candidate_rewards[picks]
        group = ResponseGroup.from_rewards([alphabet[i] for i in picks], rewards)
        if group.is_degenerate:
            trace.zero_variance_groups += 1
        policy = gradient_step(policy, old, ref, group, config)
        probs = tuple(float(p) for p in policy.probabilities)
        trace.steps.append(StepRecord(step, float(rewards.mean()), kl_divergence(policy, ref), probs))
        if trace.first_converged_step is None and trace.converged_at(probs):
            trace.first_converged_step = step

    if trace.zero_variance_groups == config.steps:
        logger.warning("%s: every group had zero reward variance, no learning signal", scenario.name)
    elif trace.zero_variance_groups:
        logger.info("%s: %d of %d groups had zero reward variance",
                    scenario.name, trace.zero_variance_groups, config.steps)
    logger.info("%s: converged=%s after %d steps", scenario.name, trace.converged, config.steps)
    return trace
