"""
Scenario documents (schema_version "1.0").

A scenario describes synthetic gateways with piecewise-constant SR regimes
and latency distributions, the traffic (rate, horizon, arrival process,
dimension, retries) and the experiment arms to run. Arms may carry explicit
parameters or ask for them to be derived:

    "exploration": {"derive": true}                         from first-regime SRs
    "exploration": {"exploration_factor": 0.15, "window_size": 1100}
    "downtime": {"derive": true, "sr1": 80, "sr2": 50, "sigma": 10}
    "downtime": {"reward_factor": 0.01, "threshold": 0.687, "sigma_factor": 3}

Latency defaults (success lognormal median 2 s sigma 0.5, failure lognormal
median 30 s sigma 0.5) are placeholders for real measurements.

Every violation raises ScenarioError naming the offending field.
"""
import bisect
import copy
import json
import math
import os
from dataclasses import dataclass, field

from parameter_derivation.downtime_derivation import default_sr2, derive_downtime
from parameter_derivation.explore_optimizer import derive_dimension_params
from routing_engine.config import RoutingConfig
from routing_engine.domain import (
    DimensionKey,
    DowntimeParams,
    ExplorationParams,
    FeedbackConfig,
    GLOBAL_DIMENSION,
    canonical_key,
    seconds_to_ms,
)
from routing_engine.errors import RoutePilotError, ScenarioError
from routing_engine.experiments import ExperimentArm, ExperimentPlan, RoutingStrategy

SCHEMA_VERSION = "1.0"
ARRIVAL_PROCESSES = ("poisson", "fixed")
INSTRUMENT_FIELD = "PAYMENT_INSTRUMENT"


@dataclass(frozen=True)
class LatencySpec:
    kind: str = "lognormal"
    median_s: float = 2.0
    sigma: float = 0.5

    @property
    def mean_s(self) -> float:
        if self.kind == "fixed":
            return self.median_s
        return self.median_s * math.exp(self.sigma ** 2 / 2.0)

    def sample_ms(self, z: float, cap_s: float) -> int:
        """Latency for a standard-normal draw z; fixed specs ignore z."""
        seconds = self.median_s if self.kind == "fixed" else self.median_s * math.exp(self.sigma * z)
        return seconds_to_ms(min(seconds, cap_s))


DEFAULT_SUCCESS_LATENCY = LatencySpec("lognormal", 2.0, 0.5)
DEFAULT_FAILURE_LATENCY = LatencySpec("lognormal", 30.0, 0.5)


@dataclass(frozen=True)
class GatewayModel:
    id: str
    regimes: tuple[tuple[int, float], ...]
    success_latency: LatencySpec = DEFAULT_SUCCESS_LATENCY
    failure_latency: LatencySpec = DEFAULT_FAILURE_LATENCY
    init_fail_prob: float = 0.0
    supported_instruments: tuple[str, ...] | None = None

    def sr_at(self, t_ms: int) -> float:
        """SR percent in force at t_ms."""
        starts = [start for start, _ in self.regimes]
        return self.regimes[bisect.bisect_right(starts, t_ms) - 1][1]

    def supports(self, dimension: DimensionKey) -> bool:
        if self.supported_instruments is None:
            return True
        instrument = dict(dimension.entries).get(INSTRUMENT_FIELD)
        return instrument is None or instrument in self.supported_instruments


@dataclass(frozen=True)
class Scenario:
    name: str
    gateways: tuple[GatewayModel, ...]
    tps: float
    horizon_ms: int
    dimension: DimensionKey
    plan: ExperimentPlan
    seed: int
    max_retries: int = 0
    arrivals: str = "poisson"
    feedback: FeedbackConfig = field(default_factory=FeedbackConfig)
    schema_version: str = SCHEMA_VERSION
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def gateway(self, gateway_id: str) -> GatewayModel:
        for g in self.gateways:
            if g.id == gateway_id:
                return g
        raise KeyError(gateway_id)

    @property
    def gateway_ids(self) -> tuple[str, ...]:
        return tuple(g.id for g in self.gateways)

    def eligible_ids(self) -> tuple[str, ...]:
        return tuple(g.id for g in self.gateways if g.supports(self.dimension))

    def with_seed(self, seed: int, routing_config: RoutingConfig | None = None) -> "Scenario":
        doc = copy.deepcopy(self.raw)
        doc["seed"] = int(seed)
        return scenario_from_dict(doc, routing_config)


# ----------------------------------------------------------------------
# Parsing helpers
# ----------------------------------------------------------------------
def _as_float(value, field_name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ScenarioError(field_name, f"must be a finite number, got {value!r}")
    return float(value)


def _as_int(value, field_name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value) \
            or value != int(value):
        raise ScenarioError(field_name, f"must be an integer, got {value!r}")
    return int(value)


def _number(doc: dict, key: str, where: str, default=None, minimum=None, exclusive=True) -> float:
    value = doc.get(key, default)
    if value is None:
        raise ScenarioError(f"{where}{key}", "is required")
    value = _as_float(value, f"{where}{key}")
    if minimum is not None and (value <= minimum if exclusive else value < minimum):
        op = ">" if exclusive else ">="
        raise ScenarioError(f"{where}{key}", f"must be {op} {minimum}, got {value}")
    return float(value)


def _latency(doc, where: str, default: LatencySpec) -> LatencySpec:
    if doc is None:
        return default
    if not isinstance(doc, dict):
        raise ScenarioError(where, "must be an object")
    kind = doc.get("kind", "lognormal")
    if kind == "fixed":
        return LatencySpec("fixed", _number(doc, "value_s", f"{where}.", minimum=0, exclusive=False), 0.0)
    if kind == "lognormal":
        return LatencySpec(
            "lognormal",
            _number(doc, "median_s", f"{where}.", default=default.median_s, minimum=0),
            _number(doc, "sigma", f"{where}.", default=0.5, minimum=0, exclusive=False),
        )
    raise ScenarioError(f"{where}.kind", f"must be 'lognormal' or 'fixed', got {kind!r}")


def _gateway(doc, index: int) -> GatewayModel:
    where = f"gateways[{index}]"
    if not isinstance(doc, dict):
        raise ScenarioError(where, "must be an object")
    gateway_id = doc.get("id")
    if not isinstance(gateway_id, str) or not gateway_id:
        raise ScenarioError(f"{where}.id", "must be a non-empty string")

    regimes_doc = doc.get("regimes")
    if not isinstance(regimes_doc, list) or not regimes_doc:
        raise ScenarioError(f"{where}.regimes", "must be a non-empty list of [start_s, sr_percent]")
    regimes = []
    for j, regime in enumerate(regimes_doc):
        if not isinstance(regime, (list, tuple)) or len(regime) != 2:
            raise ScenarioError(f"{where}.regimes[{j}]", "must be [start_s, sr_percent]")
        start_s = _as_float(regime[0], f"{where}.regimes[{j}]")
        sr = _as_float(regime[1], f"{where}.regimes[{j}]")
        if not 0.0 < sr <= 100.0:
            raise ScenarioError(f"{where}.regimes[{j}]", f"sr must be in (0, 100], got {sr}")
        regimes.append((seconds_to_ms(start_s), sr))
    if regimes[0][0] != 0:
        raise ScenarioError(f"{where}.regimes", "first regime must start at t=0")
    if any(b[0] <= a[0] for a, b in zip(regimes, regimes[1:])):
        raise ScenarioError(f"{where}.regimes", "regime start times must be strictly increasing")

    init_fail = _number(doc, "init_fail_prob", f"{where}.", default=0.0, minimum=0, exclusive=False)
    if init_fail >= 1.0:
        raise ScenarioError(f"{where}.init_fail_prob", f"must be < 1, got {init_fail}")

    instruments = doc.get("supported_instruments")
    if instruments is not None:
        if not isinstance(instruments, list) or not all(isinstance(i, str) for i in instruments):
            raise ScenarioError(f"{where}.supported_instruments", "must be a list of strings")
        instruments = tuple(instruments)

    return GatewayModel(
        id=gateway_id,
        regimes=tuple(regimes),
        success_latency=_latency(doc.get("success_latency"), f"{where}.success_latency", DEFAULT_SUCCESS_LATENCY),
        failure_latency=_latency(doc.get("failure_latency"), f"{where}.failure_latency", DEFAULT_FAILURE_LATENCY),
        init_fail_prob=init_fail,
        supported_instruments=instruments,
    )


def _exploration(doc, where: str, gateways: list[GatewayModel], tps: float, cfg: RoutingConfig) -> ExplorationParams:
    if doc is None:
        return ExplorationParams(0.0, 1, max_window_age_ms=cfg.max_window_age_ms)
    if not isinstance(doc, dict):
        raise ScenarioError(where, "must be an object")
    horizon_s = _number(doc, "horizon_hours", f"{where}.", default=cfg.horizon_hours, minimum=0) * 3600
    if doc.get("derive"):
        gateway_sr = doc.get("gateway_sr")
        if gateway_sr is None:
            gateway_sr = [g.regimes[0][1] / 100.0 for g in gateways]
        if not isinstance(gateway_sr, list):
            raise ScenarioError(f"{where}.gateway_sr", "must be a list of fractions")
        gateway_sr = [_as_float(sr, f"{where}.gateway_sr") for sr in gateway_sr]
        try:
            return derive_dimension_params(
                gateway_sr, tps, horizon_s=horizon_s,
                clamp_min=_number(doc, "clamp_min", f"{where}.", default=cfg.clamp_min),
                clamp_max=_number(doc, "clamp_max", f"{where}.", default=cfg.clamp_max),
                max_window_age_ms=cfg.max_window_age_ms,
            )
        except RoutePilotError as e:
            raise ScenarioError(where, str(e)) from e

    e = _number(doc, "exploration_factor", f"{where}.", minimum=0, exclusive=False)
    window = doc.get("window_size")
    if window is None:
        window = max(1, int(round(e * horizon_s * tps)))
    window = _as_int(window, f"{where}.window_size")
    try:
        return ExplorationParams(e, window, max_window_age_ms=cfg.max_window_age_ms)
    except RoutePilotError as ex:
        raise ScenarioError(where, str(ex)) from ex


def _downtime(doc, where: str, gateways: list[GatewayModel], tps: float, cfg: RoutingConfig) -> DowntimeParams | None:
    if doc is None:
        return None
    if not isinstance(doc, dict):
        raise ScenarioError(where, "must be an object")
    revival_ms = seconds_to_ms(_number(doc, "revival_interval_s", f"{where}.", default=cfg.revival_interval_s,
                                       minimum=0))
    try:
        if doc.get("derive"):
            sr1 = _number(doc, "sr1", f"{where}.", default=max(g.regimes[0][1] for g in gateways))
            sr2 = _number(doc, "sr2", f"{where}.", default=default_sr2(sr1, cfg.default_sr2_gap, cfg.sr2_floor))
            sigma = _number(doc, "sigma", f"{where}.", default=cfg.sigma_factor)
            latency_s = _number(doc, "latency_s", f"{where}.",
                                default=sum(g.success_latency.mean_s for g in gateways) / len(gateways))
            derivation = derive_downtime(sr1, sr2, sigma, tps, latency_s,
                                         exact_root=bool(doc.get("exact_root", cfg.use_exact_root)))
            return derivation.to_params(revival_ms)
        return DowntimeParams(
            reward_factor=_number(doc, "reward_factor", f"{where}."),
            threshold=_number(doc, "threshold", f"{where}."),
            sigma_factor=_number(doc, "sigma_factor", f"{where}.", default=cfg.sigma_factor),
            revival_interval_ms=revival_ms,
        )
    except ScenarioError:
        raise
    except RoutePilotError as e:
        raise ScenarioError(where, str(e)) from e


def _arm(doc, index: int, gateways: list[GatewayModel], tps: float, cfg: RoutingConfig) -> ExperimentArm:
    where = f"arms[{index}]"
    if not isinstance(doc, dict):
        raise ScenarioError(where, "must be an object")
    arm_id = doc.get("id")
    if not isinstance(arm_id, str) or not arm_id:
        raise ScenarioError(f"{where}.id", "must be a non-empty string")
    try:
        strategy = RoutingStrategy(doc.get("strategy", "dynamic"))
    except ValueError:
        raise ScenarioError(f"{where}.strategy",
                            f"must be one of {[s.value for s in RoutingStrategy]}") from None

    known = {g.id for g in gateways}
    priority = doc.get("priority", [])
    if not isinstance(priority, list) or any(not isinstance(p, str) or p not in known for p in priority):
        raise ScenarioError(f"{where}.priority", f"must list known gateway ids {sorted(known)}")

    if strategy == RoutingStrategy.DYNAMIC:
        exploration = _exploration(doc.get("exploration"), f"{where}.exploration", gateways, tps, cfg)
        downtime = _downtime(doc.get("downtime"), f"{where}.downtime", gateways, tps, cfg)
    else:
        exploration = ExplorationParams(0.0, 1, max_window_age_ms=cfg.max_window_age_ms)
        downtime = None
    if len(gateways) * exploration.exploration_factor >= 1.0:
        raise ScenarioError(f"{where}.exploration", f"m*e >= 1 for {len(gateways)} gateways")

    return ExperimentArm(
        configuration=arm_id,
        exploration=exploration,
        downtime=downtime,
        strategy=strategy,
        priority=tuple(priority),
    )


def scenario_from_dict(doc: dict, routing_config: RoutingConfig | None = None) -> Scenario:
    cfg = routing_config or RoutingConfig()
    if not isinstance(doc, dict):
        raise ScenarioError("scenario", "must be a JSON object")
    version = str(doc.get("schema_version", SCHEMA_VERSION))
    if version != SCHEMA_VERSION:
        raise ScenarioError("schema_version", f"unsupported version {version!r}, expected {SCHEMA_VERSION!r}")

    tps = _number(doc, "tps", "", minimum=0)
    if "horizon_s" in doc:
        horizon_s = _number(doc, "horizon_s", "", minimum=0)
    else:
        horizon_s = _number(doc, "horizon_hours", "", minimum=0) * 3600
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ScenarioError("seed", f"must be an integer, got {seed!r}")
    arrivals = doc.get("arrivals", "poisson")
    if arrivals not in ARRIVAL_PROCESSES:
        raise ScenarioError("arrivals", f"must be one of {list(ARRIVAL_PROCESSES)}, got {arrivals!r}")

    dimension_doc = doc.get("dimension", {})
    if not isinstance(dimension_doc, (dict, str)):
        raise ScenarioError("dimension", "must be an object of field -> value or a FIELD=value|... string")
    try:
        if isinstance(dimension_doc, str):
            dimension = DimensionKey.parse(dimension_doc, cfg.dimension_schema)
        elif dimension_doc:
            dimension = canonical_key(dimension_doc.items(), cfg.dimension_schema)
        else:
            dimension = GLOBAL_DIMENSION
    except RoutePilotError as e:
        raise ScenarioError("dimension", str(e)) from e

    gateways_doc = doc.get("gateways")
    if not isinstance(gateways_doc, list) or not gateways_doc:
        raise ScenarioError("gateways", "must be a non-empty list")
    gateways = [_gateway(g, i) for i, g in enumerate(gateways_doc)]
    ids = [g.id for g in gateways]
    if len(set(ids)) != len(ids):
        raise ScenarioError("gateways", f"duplicate gateway ids {ids}")
    eligible = [g for g in gateways if g.supports(dimension)]
    if not eligible:
        raise ScenarioError("gateways", f"no gateway supports dimension {dimension}")

    max_retries = doc.get("max_retries", 0)
    if isinstance(max_retries, bool) or not isinstance(max_retries, int) or not 0 <= max_retries < len(gateways):
        raise ScenarioError("max_retries", f"must be an integer in [0, {len(gateways) - 1}], got {max_retries!r}")

    feedback_doc = doc.get("feedback", {}) or {}
    if not isinstance(feedback_doc, dict):
        raise ScenarioError("feedback", "must be an object")
    success_timeout_s = _number(feedback_doc, "success_timeout_s", "feedback.", default=cfg.success_timeout_s)
    failure_timeout_s = _number(feedback_doc, "failure_timeout_s", "feedback.", default=cfg.failure_timeout_s)
    try:
        feedback = FeedbackConfig(
            success_timeout_ms=seconds_to_ms(success_timeout_s),
            failure_timeout_ms=seconds_to_ms(failure_timeout_s),
        )
    except RoutePilotError as e:
        raise ScenarioError("feedback", str(e)) from e

    arms_doc = doc.get("arms")
    if not isinstance(arms_doc, list) or not arms_doc:
        raise ScenarioError("arms", "must be a non-empty list")
    arms = [_arm(a, i, eligible, tps, cfg) for i, a in enumerate(arms_doc)]
    try:
        plan = ExperimentPlan(tuple(arms))
    except RoutePilotError as e:
        raise ScenarioError("arms", str(e)) from e

    return Scenario(
        name=str(doc.get("name", "scenario")),
        gateways=tuple(gateways),
        tps=tps,
        horizon_ms=seconds_to_ms(horizon_s),
        dimension=dimension,
        plan=plan,
        seed=seed,
        max_retries=max_retries,
        arrivals=arrivals,
        feedback=feedback,
        schema_version=version,
        raw=copy.deepcopy(doc),
    )


def load_scenario(path: str, routing_config: RoutingConfig | None = None, seed: int | None = None) -> Scenario:
    if not os.path.exists(path):
        raise ScenarioError("scenario", f"file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ScenarioError("scenario", f"invalid JSON in {path}: {e}") from e
    if seed is not None and isinstance(doc, dict):
        doc["seed"] = int(seed)
    return scenario_from_dict(doc, routing_config)
