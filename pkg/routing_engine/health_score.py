"""
Health Score

Per-(configuration, dimension, gateway) scalar driving downtime detection.
Penalize on initiation, reward on a confirmed success; the gateway is DOWN
while the score sits below the dimension threshold and is revived with a
soft reset after the revival interval.
"""
from dataclasses import dataclass, replace

from routing_engine.domain import GatewayState
from routing_engine.errors import InvalidParameterError

REVIVAL_PENALIZE_CREDIT = 10


@dataclass(frozen=True)
class HealthScore:
    value: float = 1.0
    state: GatewayState = GatewayState.UP
    last_transition: int = 0

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise InvalidParameterError(f"health score must be in [0, 1], got {self.value}")

    @property
    def is_down(self) -> bool:
        return self.state == GatewayState.DOWN


def _check_factor(a: float):
    if not 0.0 < a < 1.0:
        raise InvalidParameterError(f"reward factor must be in (0, 1), got {a}")


def penalize(s: HealthScore, a: float) -> HealthScore:
    _check_factor(a)
    return replace(s, value=s.value * (1.0 - a))


def reward(s: HealthScore, a: float) -> HealthScore:
    # Clamped at 1: the score is read as a probability.
    _check_factor(a)
    return replace(s, value=min(1.0, s.value + a))


def evaluate_state(s: HealthScore, threshold: float, now: int | None = None) -> HealthScore:
    """DOWN iff value < threshold (strict). The transition time is recorded only on a change."""
    target = GatewayState.DOWN if s.value < threshold else GatewayState.UP
    if target == s.state:
        return s
    return replace(s, state=target, last_transition=s.last_transition if now is None else int(now))


def revival_due(s: HealthScore, now: int, interval_ms: int) -> bool:
    return s.is_down and now - s.last_transition >= interval_ms


def revive(s: HealthScore, a: float, now: int, interval_ms: int) -> tuple[HealthScore, bool]:
    """
    Soft-reset a DOWN score by the credit of ten penalizes: value / (1 - a)^10.

    Returns (score, revived). Before the interval has elapsed, or for an UP
    score, the input is returned unchanged with revived=False.
    """
    _check_factor(a)
    if not revival_due(s, now, interval_ms):
        return s, False
    value = min(1.0, s.value / (1.0 - a) ** REVIVAL_PENALIZE_CREDIT)
    return HealthScore(value=value, state=GatewayState.UP, last_transition=int(now)), True
