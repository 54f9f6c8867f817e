"""
Discrete-event simulator.

Drives the RoutingEngine with synthetic traffic on a virtual clock:
arrival -> arm assignment -> route -> initiation (with cascade) -> delayed
feedback, with apply_timeouts ticked every virtual second.

Randomness comes from independent numpy streams spawned from the scenario
seed (arrivals, outcomes, latencies, initiation failures, routing). Each
transaction consumes a fixed number of draws from every stream, so two runs
of the same scenario differing only in routing parameters see the same
arrivals and the same per-transaction outcome uniforms (common random
numbers): a transaction succeeds iff its uniform is below the SR of the
gateway it finally lands on.
"""
import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from routing_engine.clock import VirtualClock
from routing_engine.config import RoutingConfig
from routing_engine.debug import dprint, is_debug_enabled
from routing_engine.decision_engine import AttemptResult, RoutingRequest
from routing_engine.domain import TransactionOutcome, TxnStatus
from routing_engine.engine import RoutingEngine
from routing_engine.errors import ScenarioError
from routing_engine.experiments import RoutingStrategy, compare_arms, compare_gateways
from routing_engine.feedback_loop import FeedbackCounters, FeedbackEvent
from routing_engine.replay import ReplayEvent, ReplayLog
from simulation.scenario import Scenario

DRAW_BLOCK = 4096
LONG_DOWNTIME_MS = 2 * 60 * 60 * 1000
# A score space whose window took no new outcome for this long raises a stagnant-score alert.
STAGNANT_SCORE_MS = 2 * 60 * 60 * 1000
ALERT_CHECK_MS = 60_000

LONG_DOWNTIME = "long_downtime"
STAGNANT_SCORE = "stagnant_score"

SUCCEEDED = "succeeded"
FAILED = "failed"
TIMED_OUT = "timed_out"


class _Draws:
    """Block-buffered scalar draws from one numpy Generator."""

    def __init__(self, rng: np.random.Generator, method: str):
        self._fill = getattr(rng, method)
        self._buffer = np.empty(0)
        self._pos = 0

    def next(self) -> float:
        if self._pos >= len(self._buffer):
            self._buffer = self._fill(DRAW_BLOCK)
            self._pos = 0
        value = self._buffer[self._pos]
        self._pos += 1
        return float(value)


class RandomStreams:

    def __init__(self, seed: int):
        arrival, outcome, latency, init_fail, routing = np.random.SeedSequence(seed).spawn(5)
        self.interarrival = _Draws(np.random.default_rng(arrival), "standard_exponential")
        self.outcome = _Draws(np.random.default_rng(outcome), "random")
        self.latency = _Draws(np.random.default_rng(latency), "standard_normal")
        self.init_fail = _Draws(np.random.default_rng(init_fail), "random")
        self.routing = np.random.default_rng(routing)


@dataclass
class _Tally:
    routed: int = 0
    succeeded: int = 0
    failed: int = 0
    timed_out: int = 0
    explored: int = 0

    def add(self, outcome: str):
        self.routed += 1
        if outcome == SUCCEEDED:
            self.succeeded += 1
        elif outcome == FAILED:
            self.failed += 1
        else:
            self.timed_out += 1


@dataclass
class _RankingTally:
    """
    Exploit decisions taken with every window warm.

    hit is 1 when the truly best gateway ranked first. gap is the best
    gateway's observed score lead over the mean of the others minus its true
    lead; it has zero mean while the regimes hold still, so it serves as a
    control variate for hit.
    """

    n: int = 0
    hits: float = 0.0
    gap: float = 0.0
    gap_sq: float = 0.0
    hit_gap: float = 0.0

    def add(self, hit: bool, gap: float):
        self.n += 1
        self.hits += hit
        self.gap += gap
        self.gap_sq += gap * gap
        self.hit_gap += hit * gap

    def accuracy(self) -> float:
        return self.hits / self.n if self.n else float("nan")

    def adjusted_accuracy(self) -> float:
        if not self.n:
            return float("nan")
        mean_hit = self.hits / self.n
        mean_gap = self.gap / self.n
        var_gap = self.gap_sq / self.n - mean_gap * mean_gap
        if var_gap <= 0:
            return mean_hit
        beta = (self.hit_gap / self.n - mean_hit * mean_gap) / var_gap
        return mean_hit - beta * mean_gap


@dataclass
class _ArmState:
    tally: _Tally = field(default_factory=_Tally)
    gateways: dict = field(default_factory=dict)
    buckets: dict = field(default_factory=dict)
    ranking: _RankingTally = field(default_factory=_RankingTally)
    not_initiated: int = 0
    best_known: int = 0
    best_routed: int = 0


@dataclass
class RunMetrics:
    """
    Everything a run reports. Rows are plain dicts; simulation.writer turns
    them into the CSV files.
    """

    scenario_name: str
    seed: int
    arms: list[dict]
    gateways: list[dict]
    timeseries: list[dict]
    downtime_events: list[dict]
    final_state: list[dict]
    end_time_ms: int
    alerts: list[dict] = field(default_factory=list)
    downtime_case: dict | None = None
    windows: dict = field(default_factory=dict, repr=False)
    replay_log: ReplayLog | None = field(default=None, repr=False)
    # (arm, outcome) for every transaction that was initiated on a gateway.
    trace: list[tuple[str, TransactionOutcome]] | None = field(default=None, repr=False)

    def arm(self, arm_id: str) -> dict:
        for row in self.arms:
            if row["arm"] == arm_id:
                return row
        raise KeyError(arm_id)

    def overall_sr(self, arm_id: str) -> float:
        return self.arm(arm_id)["sr"]

    def best_gateway_share(self, arm_id: str) -> float:
        return self.arm(arm_id)["best_gateway_share"]

    def gateway(self, arm_id: str, gateway_id: str) -> dict:
        for row in self.gateways:
            if row["arm"] == arm_id and row["gateway"] == gateway_id:
                return row
        raise KeyError((arm_id, gateway_id))

    def exploration_share(self, arm_id: str, gateway_id: str) -> float:
        """Fraction of the arm's transactions that explored gateway_id."""
        arm_txns = self.arm(arm_id)["txn_count"]
        try:
            explored = self.gateway(arm_id, gateway_id)["explored_count"]
        except KeyError:
            explored = 0
        return explored / arm_txns if arm_txns else float("nan")


class Simulation:

    def __init__(self, scenario: Scenario, routing_config: RoutingConfig | None = None, record_replay: bool = False,
                 trace: bool = False, progress: bool = True, debug: bool | None = None):
        self.scenario = scenario
        self.cfg = routing_config or RoutingConfig()
        self.progress = progress
        self.debug = is_debug_enabled(debug)
        self.streams = RandomStreams(scenario.seed)
        self.replay_log = ReplayLog() if record_replay else None
        self.engine = RoutingEngine(
            scenario.plan,
            feedback_config=scenario.feedback,
            routing_config=self.cfg,
            seed=scenario.seed,
            rng=self.streams.routing,
            replay_log=self.replay_log,
            debug=self.debug,
        )
        self.clock = VirtualClock(0)
        self.models = {g.id: g for g in scenario.gateways}
        self.candidates = scenario.gateway_ids
        self.eligible_ids = tuple(scenario.eligible_ids())
        self.eligible = set(self.eligible_ids)
        self.dimension = scenario.dimension
        self.budget = scenario.max_retries + 1
        self.bucket_ms = max(1, int(round(self.cfg.timeseries_bucket_s * 1000)))
        self.arm_states = {arm.configuration: _ArmState() for arm in scenario.plan.arms}
        self.strategies = {arm.configuration: arm.strategy for arm in scenario.plan.arms}
        self.trace = [] if trace else None

        self._events: list[tuple[int, int, FeedbackEvent]] = []
        self._seq = 0
        self._open_episodes: dict[tuple[str, str], dict] = {}
        self._episodes: list[dict] = []
        self._last_update: dict[tuple, int] = {}
        self._open_stagnant: dict[tuple, dict] = {}
        self._stagnant: list[dict] = []

    # ------------------------------------------------------------------
    def _next_arrival(self, t: float) -> float:
        if self.scenario.arrivals == "fixed":
            return t + 1000.0 / self.scenario.tps
        return t + self.streams.interarrival.next() * 1000.0 / self.scenario.tps

    def _best_gateway(self, t_ms: int) -> str | None:
        rates = {g: self.models[g].sr_at(t_ms) for g in self.eligible}
        top = max(rates.values())
        leaders = [g for g, sr in rates.items() if sr == top]
        return leaders[0] if len(leaders) == 1 else None

    def _classify(self, success: bool, latency_ms: int) -> str:
        if success:
            return SUCCEEDED if latency_ms <= self.scenario.feedback.success_timeout_ms else TIMED_OUT
        return FAILED if latency_ms <= self.scenario.feedback.failure_timeout_ms else TIMED_OUT

    def _collect_transitions(self):
        for tr in self.engine.drain_transitions():
            key = (tr.configuration, tr.gateway)
            if tr.kind == ReplayEvent.STATE_DOWN:
                self._open_episodes[key] = {
                    "arm": tr.configuration,
                    "gateway": tr.gateway,
                    "detected_at_ms": tr.at,
                    "recovered_at_ms": None,
                    "recovered_by": "",
                    "rerouted_count": 0,
                }
            elif key in self._open_episodes:
                episode = self._open_episodes.pop(key)
                episode["recovered_at_ms"] = tr.at
                episode["recovered_by"] = "revival" if tr.kind == ReplayEvent.REVIVE else "recovery"
                self._episodes.append(episode)

    def _check_stagnant(self, now: int):
        store = self.engine.store
        with store.lock:
            newest = {key: window.newest_timestamp for key, window in store.windows.items()}
        for key, at in newest.items():
            if at is not None and at > self._last_update.get(key, -1):
                self._last_update[key] = at
                alert = self._open_stagnant.pop(key, None)
                if alert is not None:
                    alert["ended_at_ms"] = at
                    self._stagnant.append(alert)
            last = self._last_update.get(key)
            if last is not None and now - last > STAGNANT_SCORE_MS and key not in self._open_stagnant:
                self._open_stagnant[key] = {"kind": STAGNANT_SCORE, "arm": key[0], "gateway": key[2],
                                            "started_at_ms": last, "ended_at_ms": None}

    def _sample_ranking(self, state: _ArmState, configuration: str, first: str, best: str, t_ms: int):
        scores = self.engine.store.warm_scores(configuration, self.dimension, self.eligible_ids, t_ms)
        if scores is None or len(scores) < 2:
            return
        others = [g for g in scores if g != best]
        observed_lead = scores[best] - sum(scores[g] for g in others) / len(others)
        true_lead = (self.models[best].sr_at(t_ms) - sum(self.models[g].sr_at(t_ms) for g in others) / len(others))
        state.ranking.add(first == best, observed_lead - true_lead / 100.0)

    def _arrival(self, index: int, t_ms: int):
        txn_id = f"T{index:08d}"
        u_outcome = self.streams.outcome.next()
        z_latency = self.streams.latency.next()
        u_init = [self.streams.init_fail.next() for _ in range(self.budget)]

        configuration = self.engine.assign(txn_id)
        request = RoutingRequest(
            txn_id=txn_id,
            dimension=self.dimension,
            candidates=self.candidates,
            configuration=configuration,
            max_retries=self.scenario.max_retries,
            eligibility=self.eligible.__contains__,
        )
        decision = self.engine.decide(request, t_ms)
        self._collect_transitions()

        results = []
        for k, gateway in enumerate(decision.ordered_gateways[:self.budget]):
            if u_init[k] < self.models[gateway].init_fail_prob:
                results.append(AttemptResult.INIT_FAIL)
            else:
                results.append(AttemptResult.INIT_OK)
                break
        cascade_result = self.engine.initiate(decision, results, t_ms, self.scenario.max_retries)

        state = self.arm_states[configuration]
        if decision.rerouted_from is not None:
            episode = self._open_episodes.get((configuration, decision.rerouted_from))
            if episode is not None:
                episode["rerouted_count"] += 1
        if decision.explored:
            explored_tally = state.gateways.setdefault(decision.explore_target, _Tally())
            explored_tally.explored += 1

        best = self._best_gateway(t_ms)
        if best is not None:
            state.best_known += 1
            if self.strategies[configuration] == RoutingStrategy.DYNAMIC and not decision.explored:
                self._sample_ranking(state, configuration, decision.ordered_gateways[0], best, t_ms)

        final = cascade_result.final
        if final is None:
            outcome = FAILED
            state.not_initiated += 1
        else:
            model = self.models[final]
            success = u_outcome < model.sr_at(t_ms) / 100.0
            spec = model.success_latency if success else model.failure_latency
            latency_ms = spec.sample_ms(z_latency, self.cfg.latency_cap_s)
            outcome = self._classify(success, latency_ms)
            state.gateways.setdefault(final, _Tally()).add(outcome)
            if best is not None and final == best:
                state.best_routed += 1
            at = t_ms + latency_ms
            status = TxnStatus.SUCCESS if success else TxnStatus.FAILURE
            if self.trace is not None:
                self.trace.append((configuration, TransactionOutcome(
                    txn_id=txn_id, gateway=final, status=status, initiated_at=t_ms, resolved_at=at,
                    explored=decision.explored and final == decision.explore_target,
                )))
            if self.strategies[configuration] == RoutingStrategy.DYNAMIC:
                self._seq += 1
                heapq.heappush(self._events, (at, self._seq, FeedbackEvent(txn_id, status, at)))

        state.tally.add(outcome)
        bucket = state.buckets.setdefault(t_ms // self.bucket_ms, [0, 0])
        bucket[0] += 1
        bucket[1] += outcome == SUCCEEDED

        dprint(self.debug, f"[SIM] {txn_id} t={t_ms} arm={configuration} order={list(decision.ordered_gateways)} "
                           f"final={final} outcome={outcome}")

    # ------------------------------------------------------------------
    def run(self) -> RunMetrics:
        horizon = self.scenario.horizon_ms
        tick_ms = self.cfg.tick_ms
        next_tick = tick_ms
        next_check = ALERT_CHECK_MS
        next_arrival = 0.0
        index = 0
        started = time.time()

        while True:
            arrival_ms = int(math.floor(next_arrival)) if next_arrival < horizon else None
            event_ms = self._events[0][0] if self._events else None
            if arrival_ms is None and event_ms is None:
                break
            t_next = min(t for t in (arrival_ms, event_ms) if t is not None)

            while next_tick <= t_next:
                self.clock.advance_to(next_tick)
                self.engine.tick(next_tick)
                if next_tick >= next_check:
                    self._check_stagnant(next_tick)
                    next_check += ALERT_CHECK_MS
                next_tick += tick_ms
            self.clock.advance_to(t_next)

            # Feedback due at the same millisecond is delivered before the arrival.
            if event_ms is not None and event_ms == t_next:
                _, _, event = heapq.heappop(self._events)
                self.engine.submit_feedback(event)
                continue

            self._arrival(index, arrival_ms)
            index += 1
            next_arrival = self._next_arrival(next_arrival)
            if self.progress and index % 100_000 == 0:
                print(f"[SIM] {self.scenario.name}: routed {index} transactions "
                      f"({time.time() - started:.1f}s)")

        # Close everything still pending.
        while self.engine.pending_count:
            self.clock.advance_to(next_tick)
            self.engine.tick(next_tick)
            next_tick += tick_ms
        self._collect_transitions()

        if self.progress:
            print(f"[SIM] {self.scenario.name}: {index} transactions, virtual end "
                  f"{self.clock.now_ms() / 1000:.0f}s, wall {time.time() - started:.1f}s")
        return self._metrics()

    # ------------------------------------------------------------------
    def _counters(self, configuration: str) -> dict:
        loop = self.engine.feedback_loops.get(configuration)
        return (loop.counters if loop is not None else FeedbackCounters()).as_dict()

    def _metrics(self) -> RunMetrics:
        end_ms = self.clock.now_ms()
        dimension = str(self.dimension)

        arm_rows = []
        summary = compare_arms([
            {"arm": arm, "dimension": dimension, "txn_count": s.tally.routed, "success_count": s.tally.succeeded}
            for arm, s in self.arm_states.items()
        ])
        for report in summary.to_dict("records"):
            s = self.arm_states[report["arm"]]
            counters = self._counters(report["arm"])
            tally = s.tally
            arm_rows.append({
                **report,
                "strategy": self.strategies[report["arm"]].value,
                "sr": tally.succeeded / tally.routed if tally.routed else float("nan"),
                "success_count": tally.succeeded,
                "failure_count": tally.failed,
                "timeout_count": tally.timed_out,
                "not_initiated": s.not_initiated,
                "explored_count": sum(g.explored for g in s.gateways.values()),
                "best_gateway_share": s.best_routed / s.best_known if s.best_known else float("nan"),
                "ranking_accuracy": s.ranking.accuracy(),
                "ranking_accuracy_cv": s.ranking.adjusted_accuracy(),
                "late_success": counters["late_success"],
                "late_failure": counters["late_failure"],
                "unknown_feedback": counters["unknown_feedback"],
                "default_penalize": counters["default_penalize"],
                "feedback_timed_out": counters["timed_out"],
            })

        gateway_input = []
        gateway_extra = {}
        for arm, s in self.arm_states.items():
            for gateway, g in s.gateways.items():
                gateway_input.append({"arm": arm, "gateway": gateway, "txn_count": g.routed,
                                      "success_count": g.succeeded})
                gateway_extra[(arm, gateway)] = g
        gateway_rows = []
        for report in compare_gateways(gateway_input).to_dict("records"):
            g = gateway_extra[(report["arm"], report["gateway"])]
            gateway_rows.append({
                **report,
                "sr": g.succeeded / g.routed if g.routed else float("nan"),
                "success_count": g.succeeded,
                "failure_count": g.failed,
                "timeout_count": g.timed_out,
                "explored_count": g.explored,
            })

        timeseries = []
        for arm, s in sorted(self.arm_states.items()):
            for bucket, (routed, succeeded) in sorted(s.buckets.items()):
                timeseries.append({
                    "bucket_start_s": bucket * self.bucket_ms // 1000,
                    "arm": arm,
                    "txn_count": routed,
                    "sr": succeeded / routed if routed else float("nan"),
                })

        episodes = list(self._episodes) + list(self._open_episodes.values())
        downtime_rows = []
        for ep in sorted(episodes, key=lambda e: (e["arm"], e["gateway"], e["detected_at_ms"])):
            recovered = ep["recovered_at_ms"]
            duration = (recovered if recovered is not None else end_ms) - ep["detected_at_ms"]
            downtime_rows.append({
                **ep,
                "recovered_at_ms": recovered if recovered is not None else "",
                "duration_s": duration / 1000.0,
                "long_downtime": duration > LONG_DOWNTIME_MS,
            })

        alerts = []
        for row in downtime_rows:
            if row["long_downtime"]:
                alerts.append({"kind": LONG_DOWNTIME, "arm": row["arm"], "gateway": row["gateway"],
                               "started_at_ms": row["detected_at_ms"], "ended_at_ms": row["recovered_at_ms"],
                               "duration_s": row["duration_s"]})
        for alert in self._stagnant + list(self._open_stagnant.values()):
            ended = alert["ended_at_ms"]
            alerts.append({**alert, "ended_at_ms": ended if ended is not None else "",
                           "duration_s": ((ended if ended is not None else end_ms) - alert["started_at_ms"]) / 1000.0})
        alerts.sort(key=lambda a: (a["started_at_ms"], a["kind"], a["arm"], a["gateway"]))
        for row in arm_rows:
            row["long_downtimes"] = sum(1 for a in alerts if a["arm"] == row["arm"] and a["kind"] == LONG_DOWNTIME)
            row["stagnant_scores"] = sum(1 for a in alerts if a["arm"] == row["arm"] and a["kind"] == STAGNANT_SCORE)

        return RunMetrics(
            scenario_name=self.scenario.name,
            seed=self.scenario.seed,
            arms=arm_rows,
            gateways=gateway_rows,
            timeseries=timeseries,
            downtime_events=downtime_rows,
            final_state=self.engine.store.state_rows(end_ms),
            end_time_ms=end_ms,
            alerts=alerts,
            windows=self.engine.store.windows,
            replay_log=self.replay_log,
            trace=self.trace,
        )


def run(scenario: Scenario, routing_config: RoutingConfig | None = None, record_replay: bool = False,
        progress: bool = True, debug: bool | None = None, trace: bool = False) -> RunMetrics:
    return Simulation(scenario, routing_config, record_replay=record_replay, trace=trace, progress=progress,
                      debug=debug).run()


def find_drop(scenario: Scenario) -> tuple[str, int, float, float]:
    """(gateway, drop time ms, sr before, sr after) of the single SR drop configured in the scenario."""
    drops = []
    for g in scenario.gateways:
        for (_, before), (start, after) in zip(g.regimes, g.regimes[1:]):
            if after < before:
                drops.append((g.id, start, before, after))
    if len(drops) != 1:
        raise ScenarioError("gateways", f"downtime case needs exactly one SR drop, found {len(drops)}")
    return drops[0]


def run_downtime_case(scenario: Scenario, routing_config: RoutingConfig | None = None, record_replay: bool = False,
                      progress: bool = True, debug: bool | None = None) -> RunMetrics:
    """
    Run a scenario with one gateway dropping sr1 -> sr2 at tau and measure detection.

    Per dynamic arm, downtime_case reports the transactions and seconds from
    tau to the first DOWN of the dropping gateway, DOWN events before tau or
    on other gateways (spurious), rerouted transactions while it was DOWN and,
    after a revival, the transactions until it went DOWN again.
    """
    gateway, tau, sr_before, sr_after = find_drop(scenario)
    metrics = Simulation(scenario, routing_config, record_replay=record_replay, trace=True, progress=progress,
                         debug=debug).run()

    dynamic_arms = [arm.configuration for arm in scenario.plan.arms if arm.strategy == RoutingStrategy.DYNAMIC]
    case = {"gateway": gateway, "tau_ms": tau, "sr_before": sr_before, "sr_after": sr_after, "arms": {}}
    for arm in dynamic_arms:
        episodes = [e for e in metrics.downtime_events if e["arm"] == arm]
        spurious = [e for e in episodes if e["gateway"] != gateway or e["detected_at_ms"] < tau]
        detections = [e for e in episodes if e["gateway"] == gateway and e["detected_at_ms"] >= tau]

        on_gateway = [o.initiated_at for cfg, o in metrics.trace if cfg == arm and o.gateway == gateway]
        result = {
            "detected": bool(detections),
            "spurious_down_events": len(spurious),
            "detected_at_ms": None,
            "detection_txns": None,
            "detection_seconds": None,
            "rerouted_count": sum(e["rerouted_count"] for e in detections),
            "redetection_txns": None,
        }
        if detections:
            first = detections[0]
            result["detected_at_ms"] = first["detected_at_ms"]
            result["detection_txns"] = sum(1 for t in on_gateway if tau <= t < first["detected_at_ms"])
            result["detection_seconds"] = (first["detected_at_ms"] - tau) / 1000.0
            if len(detections) > 1 and first["recovered_by"] == "revival":
                revived_at = first["recovered_at_ms"]
                result["redetection_txns"] = sum(
                    1 for t in on_gateway if revived_at <= t < detections[1]["detected_at_ms"]
                )
        case["arms"][arm] = result

    metrics.downtime_case = case
    return metrics
