"""
Parameter sweeps over one scenario template.

Each grid point reruns the template's first dynamic arm alone, with the
exploration factor or the sigma factor replaced. Points run under the same
seeds, so they share arrivals and outcome draws.
"""
import copy
import math

import numpy as np
import pandas as pd

from routing_engine.config import RoutingConfig
from routing_engine.errors import InvalidParameterError, ScenarioError
from simulation.scenario import Scenario, scenario_from_dict
from simulation.simulator import find_drop, run, run_downtime_case

SWEEP_PARAMS = ("e", "sigma")
SWEEP_METRICS = ["overall_sr", "best_gateway_share", "best_gateway_share_cv", "exploration_share", "detection_txns"]
SWEEP_COLUMNS = ["param", "value"] + SWEEP_METRICS + ["replicas"]


def _dynamic_arm(doc: dict) -> dict:
    for arm in doc.get("arms", []):
        if arm.get("strategy", "dynamic") == "dynamic":
            return arm
    raise ScenarioError("arms", "sweep needs at least one dynamic arm")


def point_document(template: dict, param: str, value: float, routing_config: RoutingConfig | None = None) -> dict:
    """Scenario document for one grid point."""
    cfg = routing_config or RoutingConfig()
    doc = copy.deepcopy(template)
    arm = copy.deepcopy(_dynamic_arm(doc))
    if param == "e":
        horizon_s = float(arm.get("exploration", {}).get("horizon_hours", cfg.horizon_hours)) * 3600
        arm["exploration"] = {
            "exploration_factor": float(value),
            "window_size": max(1, int(round(float(value) * horizon_s * float(doc["tps"])))),
        }
    elif param == "sigma":
        downtime = arm.get("downtime")
        if not isinstance(downtime, dict) or not downtime.get("derive"):
            raise ScenarioError("arms.downtime", "sigma sweep needs a derived downtime block")
        arm["downtime"] = {**downtime, "sigma": float(value)}
    else:
        raise InvalidParameterError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {param!r}")
    doc["arms"] = [arm]
    return doc


def _has_drop(scenario: Scenario) -> bool:
    try:
        find_drop(scenario)
    except ScenarioError:
        return False
    return True


def run_point(template: dict, param: str, value: float, routing_config: RoutingConfig | None = None,
              seed: int | None = None) -> dict:
    doc = point_document(template, param, value, routing_config)
    if seed is not None:
        doc["seed"] = int(seed)
    scenario = scenario_from_dict(doc, routing_config)
    arm_id = scenario.plan.arms[0].configuration

    detection = float("nan")
    if param == "sigma" and _has_drop(scenario):
        metrics = run_downtime_case(scenario, routing_config, progress=False)
        txns = metrics.downtime_case["arms"][arm_id]["detection_txns"]
        detection = float(txns) if txns is not None else float("nan")
    else:
        metrics = run(scenario, routing_config, progress=False)

    eligible = scenario.eligible_ids()
    shares = [metrics.exploration_share(arm_id, g) for g in eligible]
    share_cv = math.nan
    if param == "e":
        # Exploration lands on the best gateway with probability e; the rest follows the ranking.
        accuracy = metrics.arm(arm_id)["ranking_accuracy_cv"]
        share_cv = float(value) + (1.0 - len(eligible) * float(value)) * accuracy
    return {
        "param": param,
        "value": float(value),
        "overall_sr": metrics.overall_sr(arm_id),
        "best_gateway_share": metrics.best_gateway_share(arm_id),
        "best_gateway_share_cv": share_cv,
        "exploration_share": sum(shares) / len(shares) if shares else math.nan,
        "detection_txns": detection,
    }


def _average_replicas(rows: list[dict], replicas: int) -> pd.DataFrame:
    df = pd.DataFrame(rows)
    averaged = df.groupby(["param", "value"], sort=False)[SWEEP_METRICS].mean().reset_index()
    averaged["replicas"] = replicas
    return averaged[SWEEP_COLUMNS]


def sweep(scenario: Scenario, param: str, values, routing_config: RoutingConfig | None = None,
          jobs: int = 1, replicas: int = 1) -> pd.DataFrame:
    """
    One row per grid value, in grid order.

    With replicas > 1 every grid value is run once per seed (scenario seed,
    seed + 1, ...) and the metrics are averaged. All grid values share the
    same seeds.
    """
    values = [float(v) for v in values]
    if not values:
        raise InvalidParameterError("sweep grid is empty")
    if param not in SWEEP_PARAMS:
        raise InvalidParameterError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {param!r}")
    if replicas < 1:
        raise InvalidParameterError(f"replicas must be >= 1, got {replicas}")
    # Fail on a bad template before fanning out.
    point_document(scenario.raw, param, values[0], routing_config)

    tasks = [(value, scenario.seed + r) for value in values for r in range(replicas)]
    print(f"[SWEEP] {len(values)} points x {replicas} seeds over {param} for {scenario.name} (jobs={jobs})")
    if jobs > 1 and len(tasks) > 1:
        from simulation.parallel_sweep import run_points_parallel

        rows = run_points_parallel(scenario.raw, param, tasks, routing_config, jobs)
    else:
        rows = []
        for i, (value, seed) in enumerate(tasks, start=1):
            rows.append(run_point(scenario.raw, param, value, routing_config, seed))
            print(f"[SWEEP] {i}/{len(tasks)} {param}={value:.6f} seed={seed} sr={rows[-1]['overall_sr']:.6f}")
    return _average_replicas(rows, replicas)


def empirical_argmax(df: pd.DataFrame, column: str = "best_gateway_share") -> float:
    return float(df.loc[df[column].idxmax(), "value"])


def smoothed_argmax(df: pd.DataFrame, column: str = "best_gateway_share") -> float:
    """
    Maximizer of a quadratic fitted to `column` against sqrt(value).

    The best-gateway-share curve over e is close to symmetric in sqrt(e), so
    the fitted vertex is far less noisy than the raw grid argmax. Falls back
    to the raw argmax when the grid is too small or the fit is not concave.
    The result is clipped to the grid range.
    """
    data = df[["value", column]].dropna()
    if len(data) < 3 or (data["value"] < 0).any():
        return empirical_argmax(df, column)
    c2, c1, _ = np.polyfit(np.sqrt(data["value"].to_numpy()), data[column].to_numpy(), 2)
    if c2 >= 0:
        return empirical_argmax(df, column)
    root = np.clip(-c1 / (2.0 * c2), np.sqrt(data["value"].min()), np.sqrt(data["value"].max()))
    return float(root ** 2)
