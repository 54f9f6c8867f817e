"""
Decision Engine

Pre-transaction control action: filter the merchant's candidate gateways,
decide whether this transaction is an exploration sample, rank the rest by
SR score with DOWN gateways pushed to the back, and walk the ordered list on
initiation failures.

Everything here is a pure function of (request, snapshot, rng). Score
mutation happens only in the feedback loop.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from routing_engine.domain import ConfigurationId, DimensionKey, ExplorationParams, GatewayId, GatewayState
from routing_engine.errors import InvalidParameterError, NoEligibleGatewayError
from routing_engine.health_score import HealthScore
from routing_engine.score_store import ScoreSnapshot


class AttemptResult(str, Enum):
    INIT_OK = "INIT_OK"
    INIT_FAIL = "INIT_FAIL"


@dataclass(frozen=True)
class RoutingRequest:
    txn_id: str
    dimension: DimensionKey
    candidates: tuple[GatewayId, ...]
    configuration: ConfigurationId
    max_retries: int = 0
    eligibility: Callable[[GatewayId], bool] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if not self.candidates:
            raise InvalidParameterError(f"transaction {self.txn_id}: candidate gateway list is empty")
        if len(set(self.candidates)) != len(self.candidates):
            raise InvalidParameterError(f"transaction {self.txn_id}: duplicate candidate gateways")
        if not 0 <= self.max_retries < len(self.candidates):
            raise InvalidParameterError(
                f"transaction {self.txn_id}: max_retries must be in [0, {len(self.candidates) - 1}], "
                f"got {self.max_retries}"
            )


@dataclass(frozen=True)
class RoutingDecision:
    txn_id: str
    dimension: DimensionKey
    ordered_gateways: tuple[GatewayId, ...]
    explored: bool
    explore_target: GatewayId | None
    configuration: ConfigurationId
    # Top score-ranked gateway when it is DOWN and got pushed back.
    rerouted_from: GatewayId | None = None

    def attempt_is_exploration(self, gateway: GatewayId) -> bool:
        return self.explored and gateway == self.explore_target


@dataclass(frozen=True)
class CascadeResult:
    final: GatewayId | None
    failure_feedback: tuple[GatewayId, ...]
    attempted: tuple[GatewayId, ...]

    @property
    def initiated(self) -> bool:
        return self.final is not None


def filter_eligible(req: RoutingRequest) -> list[GatewayId]:
    if req.eligibility is None:
        eligible = list(req.candidates)
    else:
        eligible = [g for g in req.candidates if req.eligibility(g)]
    if not eligible:
        raise NoEligibleGatewayError(f"transaction {req.txn_id}: no eligible gateway among {list(req.candidates)}")
    return eligible


def assign_exploration(eligible: list[GatewayId], params: ExplorationParams, rng: np.random.Generator,
                       health: dict | None = None) -> tuple[bool, GatewayId | None]:
    """
    Decide whether this transaction is an exploration sample.

    A single uniform u is drawn; the transaction explores iff u < u_up * e,
    where u_up counts eligible UP gateways, and the target is UP gateway
    floor(u / e). Each UP gateway therefore receives exploration share e, and
    runs that differ only in e see nested exploration sets.

    Args:
        eligible: Eligible gateways, merchant order
        params: Exploration factor and window size of this dimension
        rng: Routing random stream
        health: gateway -> HealthScore; DOWN gateways are never targets

    Returns:
        (explored, target)
    """
    m = len(eligible)
    e = params.exploration_factor
    if m * e >= 1.0:
        raise InvalidParameterError(f"exploration factor {e} is invalid for {m} eligible gateways (m*e >= 1)")
    if m < 2 or e == 0.0:
        return False, None

    health = health or {}
    up = [g for g in eligible if not health.get(g, HealthScore()).is_down]
    u = float(rng.random())
    if not up or u >= len(up) * e:
        return False, None
    return True, up[min(int(u / e), len(up) - 1)]


def order_gateways(eligible: list[GatewayId], sr_scores: dict, health: dict | None = None) -> list[GatewayId]:
    """UP gateways by SR score descending (ties by id), then DOWN gateways in the same order."""
    health = health or {}
    missing = [g for g in eligible if g not in sr_scores]
    if missing:
        raise InvalidParameterError(f"no SR score for gateways {missing}")

    ranked = sorted(eligible, key=lambda g: (-sr_scores[g], g))
    up = [g for g in ranked if health.get(g, HealthScore()).state == GatewayState.UP]
    down = [g for g in ranked if health.get(g, HealthScore()).state == GatewayState.DOWN]
    return up + down


def route(req: RoutingRequest, snapshot: ScoreSnapshot, params: ExplorationParams,
          rng: np.random.Generator) -> RoutingDecision:
    eligible = filter_eligible(req)
    explored, target = assign_exploration(eligible, params, rng, snapshot.health)
    ordered = order_gateways(eligible, snapshot.sr_scores, snapshot.health)

    top_by_score = min(eligible, key=lambda g: (-snapshot.sr_scores[g], g))
    rerouted_from = top_by_score if snapshot.health.get(top_by_score, HealthScore()).is_down else None

    if explored:
        ordered.remove(target)
        ordered.insert(0, target)

    return RoutingDecision(
        txn_id=req.txn_id,
        dimension=req.dimension,
        ordered_gateways=tuple(ordered),
        explored=explored,
        explore_target=target,
        configuration=req.configuration,
        rerouted_from=rerouted_from,
    )


def order_by_priority(eligible: list[GatewayId], priority: tuple[GatewayId, ...]) -> list[GatewayId]:
    """Static merchant priority: listed gateways first in list order, the rest by id."""
    rank = {g: i for i, g in enumerate(priority)}
    return sorted(eligible, key=lambda g: (0, rank[g], "") if g in rank else (1, 0, g))


def order_randomly(eligible: list[GatewayId], rng: np.random.Generator) -> list[GatewayId]:
    return [eligible[i] for i in rng.permutation(len(eligible))]


def cascade(decision: RoutingDecision, attempt_results, max_retries: int) -> CascadeResult:
    """
    Walk the ordered list on initiation failures.

    attempt_results[i] is the initiation result of ordered_gateways[i]; the
    walk stops at the first INIT_OK. With no INIT_OK inside the retry budget
    the transaction is not initiated and final is None.
    """
    results = [AttemptResult(r) for r in attempt_results]
    budget = min(max_retries + 1, len(decision.ordered_gateways))
    if len(results) > budget:
        raise InvalidParameterError(
            f"transaction {decision.txn_id}: {len(results)} attempt results exceed retry budget {budget}"
        )

    failures = []
    final = None
    for i, result in enumerate(results):
        gateway = decision.ordered_gateways[i]
        if result == AttemptResult.INIT_OK:
            if i != len(results) - 1:
                raise InvalidParameterError(
                    f"transaction {decision.txn_id}: attempt results continue after INIT_OK on {gateway}"
                )
            final = gateway
            break
        failures.append(gateway)

    return CascadeResult(
        final=final,
        failure_feedback=tuple(failures),
        attempted=tuple(decision.ordered_gateways[:len(results)]),
    )
