"""Payoffs, costs, thresholds and the binomial success model."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

from ..errors import ConfigError, DomainError

ATTACKS = ("FGSM", "OnePixel")
DEFENSES = ("Original", "Retrain")

# cross-entropy of a uniform prediction over 36 classes on each of 4 heads
LOSS_CEILING = 4 * math.log(36)


@dataclass(frozen=True)
class PayoffPair:
    """Utilities of the attacker (leader) and the defender (follower)."""

    attacker: float
    defender: float

    def is_complementary(self, total: float = 10.0, tol: float = 1e-9) -> bool:
        return abs(self.attacker + self.defender - total) <= tol

    def astuple(self) -> tuple[float, float]:
        return (self.attacker, self.defender)

    def __str__(self) -> str:
        return f"({_fmt(self.attacker)}, {_fmt(self.defender)})"


def _fmt(v: float) -> str:
    return f"{round(v, 6):g}"


@dataclass(frozen=True)
class CostPair:
    follower: float
    leader: float


@dataclass(frozen=True)
class GameConfig:
    sigma: float = 0.0
    attacker_success_threshold: float = 0.50
    defense_success_threshold: float = 0.85
    utility_scale: float = 10.0
    accuracy_metric: str = "per_char"

    def __post_init__(self):
        for name in ("attacker_success_threshold", "defense_success_threshold"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if not self.utility_scale > 0:
            raise ConfigError("utility_scale must be positive")
        if self.accuracy_metric not in ("per_char", "full_match"):
            raise ConfigError("accuracy_metric must be 'per_char' or 'full_match'")

    def to_dict(self) -> dict:
        return asdict(self)


class AttackResult(str, enum.Enum):
    SUCCESSFUL = "Successful_A"
    NOT_SUCCESSFUL = "NotSuccessful_A"


class DefenseResult(str, enum.Enum):
    SUCCESSFUL = "Successful_D"
    NOT_SUCCESSFUL = "NotSuccessful_D"


def _check_accuracy(m_acc: float) -> float:
    m_acc = float(m_acc)
    if not 0.0 <= m_acc <= 1.0:
        raise DomainError(f"accuracy {m_acc} outside [0, 1]")
    return m_acc


def utility_from_accuracy(m_acc: float, cfg: GameConfig = GameConfig()) -> PayoffPair:
    """Defender earns ``scale * acc``; the attacker gets the remainder of ``scale``."""
    m_acc = _check_accuracy(m_acc)
    defender = cfg.utility_scale * m_acc
    return PayoffPair(attacker=cfg.utility_scale - defender, defender=defender)


def cost_pair(loss_value: float) -> CostPair:
    """Normalise a cross-entropy value to follower/leader costs in [0, 1]."""
    loss_value = float(loss_value)
    if not math.isfinite(loss_value) or loss_value < 0:
        raise DomainError(f"loss must be finite and non-negative, got {loss_value}")
    follower = min(loss_value / LOSS_CEILING, 1.0)
    return CostPair(follower=follower, leader=1.0 - follower)


@dataclass(frozen=True)
class BinomialQuery:
    attacks: int
    successes: int
    p: float

    def __post_init__(self):
        if self.attacks < 0 or not 0 <= self.successes <= self.attacks:
            raise DomainError(f"need 0 <= s <= A, got A={self.attacks}, s={self.successes}")
        if not 0.0 <= self.p <= 1.0:
            raise DomainError(f"p={self.p} outside [0, 1]")


def binomial_pmf(q: BinomialQuery) -> float:
    """Probability of exactly ``q.successes`` successes in ``q.attacks`` trials."""
    a, s, p = q.attacks, q.successes, q.p
    # exact integer coefficient, so no factorial overflow
    return math.comb(a, s) * p ** s * (1.0 - p) ** (a - s)


def classify_attack(m_acc_post_attack: float, cfg: GameConfig = GameConfig()) -> AttackResult:
    """An attack succeeds when accuracy falls to the threshold or below."""
    if _check_accuracy(m_acc_post_attack) <= cfg.attacker_success_threshold:
        return AttackResult.SUCCESSFUL
    return AttackResult.NOT_SUCCESSFUL


def classify_defense(m_acc_post_retrain: float, cfg: GameConfig = GameConfig()) -> DefenseResult:
    """A defence succeeds only when accuracy is strictly above the threshold."""
    if _check_accuracy(m_acc_post_retrain) > cfg.defense_success_threshold:
        return DefenseResult.SUCCESSFUL
    return DefenseResult.NOT_SUCCESSFUL
