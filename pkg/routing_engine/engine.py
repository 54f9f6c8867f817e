"""
Routing Engine

Library facade tying the pieces together for one process:

    engine = RoutingEngine(plan, seed=7)
    decision = engine.decide(request, now)
    result = engine.initiate(decision, attempt_results, now)
    engine.submit_feedback(FeedbackEvent(txn_id, TxnStatus.SUCCESS, later))
    engine.tick(now)

Downtime states are evaluated at route time: before a dynamic arm takes its
snapshot, each candidate's health score is revived if due and then compared
against the dimension threshold.
Refresh and snapshot run under the store lock as one step.
"""
from collections import deque
from dataclasses import dataclass

import numpy as np

from routing_engine.config import RoutingConfig
from routing_engine.debug import dprint, is_debug_enabled
from routing_engine.decision_engine import (
    CascadeResult,
    RoutingDecision,
    RoutingRequest,
    cascade,
    filter_eligible,
    order_by_priority,
    order_randomly,
    route,
)
from routing_engine.domain import ConfigurationId, FeedbackConfig, GatewayId, GatewayState
from routing_engine.experiments import ExperimentPlan, RoutingStrategy, assign_arm
from routing_engine.feedback_loop import FeedbackEvent, FeedbackLoop
from routing_engine.health_score import evaluate_state, revive
from routing_engine.replay import ReplayEvent, ReplayLog
from routing_engine.score_store import ScoreStore


@dataclass(frozen=True)
class StateTransition:
    configuration: ConfigurationId
    dimension: str
    gateway: GatewayId
    kind: ReplayEvent
    at: int
    health_value: float


class RoutingEngine:

    def __init__(self, plan: ExperimentPlan, feedback_config: FeedbackConfig | None = None,
                 routing_config: RoutingConfig | None = None, seed: int = 0, rng: np.random.Generator | None = None,
                 replay_log: ReplayLog | None = None, track_access: bool = False, debug: bool | None = None,
                 transition_history: int = 10_000):
        routing_config = routing_config or RoutingConfig()
        self.plan = plan
        self.seed = seed
        self.debug = is_debug_enabled(debug)
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.replay_log = replay_log
        self.store = ScoreStore(
            cold_start_score=routing_config.cold_start_score,
            min_samples=routing_config.min_samples,
            track_access=track_access,
        )
        for arm in plan.arms:
            self.store.configure(arm.configuration, arm.exploration, arm.downtime)
        feedback_config = feedback_config or FeedbackConfig()
        self.feedback_loops = {
            arm.configuration: FeedbackLoop(self.store, feedback_config, replay_log, self.debug)
            for arm in plan.arms
            if arm.strategy == RoutingStrategy.DYNAMIC
        }
        # Most recent state changes; callers that need all of them use drain_transitions().
        self.transitions: deque[StateTransition] = deque(maxlen=transition_history)
        # Feedback for transactions of arms that keep no scores.
        self.unrouted_feedback = 0

    def assign(self, txn_id: str) -> ConfigurationId:
        return assign_arm(txn_id, self.plan, self.seed)

    def _log(self, event, gateway, dimension, configuration, at):
        if self.replay_log is not None:
            self.replay_log.append(event, "", gateway, dimension, configuration, False, at)

    def refresh_downtime(self, configuration: ConfigurationId, dimension: str, gateways, now: int) -> None:
        """Revive DOWN gateways whose interval elapsed, then re-evaluate UP/DOWN against the threshold."""
        downtime = self.store.downtime_params(configuration)
        if downtime is None:
            return
        dimension = str(dimension)
        with self.store.lock:
            for gateway in gateways:
                h = self.store.health(configuration, dimension, gateway)
                h, revived = revive(h, downtime.reward_factor, now, downtime.revival_interval_ms)
                if revived:
                    self._log(ReplayEvent.REVIVE, gateway, dimension, configuration, now)
                    self.transitions.append(StateTransition(configuration, dimension, gateway, ReplayEvent.REVIVE,
                                                            int(now), h.value))
                    dprint(self.debug, f"[DOWNTIME] revived {gateway} ({configuration}) at {now} -> {h.value:.6f}")

                evaluated = evaluate_state(h, downtime.threshold, now)
                if evaluated.state != h.state:
                    event = ReplayEvent.STATE_DOWN if evaluated.state == GatewayState.DOWN else ReplayEvent.STATE_UP
                    self._log(event, gateway, dimension, configuration, now)
                    self.transitions.append(StateTransition(configuration, dimension, gateway, event,
                                                            int(now), evaluated.value))
                    dprint(self.debug, f"[DOWNTIME] {gateway} ({configuration}) -> {evaluated.state.value} at {now}")
                if revived or evaluated is not h:
                    self.store.set_health(configuration, dimension, gateway, evaluated)

    def decide(self, request: RoutingRequest, now: int) -> RoutingDecision:
        arm = self.plan.arm(request.configuration)
        if arm.strategy == RoutingStrategy.DYNAMIC:
            eligible = filter_eligible(request)
            dimension = str(request.dimension)
            with self.store.lock:
                self.refresh_downtime(arm.configuration, dimension, eligible, now)
                snapshot = self.store.snapshot(arm.configuration, dimension, eligible, now)
            return route(request, snapshot, arm.exploration, self.rng)

        eligible = filter_eligible(request)
        if arm.strategy == RoutingStrategy.RULE_BASED:
            ordered = order_by_priority(eligible, arm.priority)
        else:
            ordered = order_randomly(eligible, self.rng)
        return RoutingDecision(
            txn_id=request.txn_id,
            dimension=request.dimension,
            ordered_gateways=tuple(ordered),
            explored=False,
            explore_target=None,
            configuration=request.configuration,
        )

    def initiate(self, decision: RoutingDecision, attempt_results, now: int, max_retries: int = 0) -> CascadeResult:
        """
        Resolve the cascade and hand every attempt to the feedback loop.

        Failed attempts are health-penalized (and SR-penalized when exploration
        flagged); the finally initiated gateway is registered as pending.
        Baseline arms keep no scores, so nothing is recorded for them.
        """
        result = cascade(decision, attempt_results, max_retries)
        arm = self.plan.arm(decision.configuration)
        if arm.strategy != RoutingStrategy.DYNAMIC:
            return result

        loop = self.feedback_loops[decision.configuration]
        dimension = str(decision.dimension)
        for gateway in result.failure_feedback:
            loop.record_initiation_failure(
                decision.txn_id, gateway, dimension, decision.configuration,
                decision.attempt_is_exploration(gateway), now,
            )
        if result.final is not None:
            loop.register_initiation(loop.make_pending(
                decision.txn_id, result.final, dimension, decision.configuration,
                decision.attempt_is_exploration(result.final), now,
            ))
        return result

    def submit_feedback(self, event: FeedbackEvent) -> str:
        """Route an outcome to the feedback loop of the transaction's (sticky) arm."""
        loop = self.feedback_loops.get(self.assign(event.txn_id))
        if loop is None:
            with self.store.lock:
                self.unrouted_feedback += 1
            return "unknown"
        return loop.submit_feedback(event)

    def tick(self, now: int) -> int:
        return sum(loop.apply_timeouts(now) for loop in self.feedback_loops.values())

    def drain_transitions(self) -> list[StateTransition]:
        """Hand over and forget the state changes recorded since the last drain."""
        with self.store.lock:
            drained = list(self.transitions)
            self.transitions.clear()
        return drained

    @property
    def pending_count(self) -> int:
        return sum(loop.pending_count for loop in self.feedback_loops.values())
