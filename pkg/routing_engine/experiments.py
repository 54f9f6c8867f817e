"""
Experiments

Configurations (arms) run side by side on live traffic. Each arm owns its own
score space in the ScoreStore; transactions are split equally by a sticky
hash of the transaction id, so a transaction and its retries stay in one arm.
"""
import hashlib
from dataclasses import dataclass, field
from enum import Enum

import pandas as pd

from routing_engine.domain import ConfigurationId, DowntimeParams, ExplorationParams, GatewayId
from routing_engine.errors import InvalidParameterError

ARM_REPORT_COLUMNS = ["arm", "dimension", "txn_count", "sr_percent", "traffic_share_percent"]
GATEWAY_REPORT_COLUMNS = ["arm", "gateway", "txn_count", "sr_percent", "traffic_share_percent"]


class RoutingStrategy(str, Enum):
    DYNAMIC = "dynamic"
    RULE_BASED = "rule_based"
    RANDOM = "random"


@dataclass(frozen=True)
class ExperimentArm:
    """
    One configuration under test.

    Dynamic arms route by SR score with exploration and downtime detection.
    Rule-based arms follow `priority` and never read feedback; random arms
    shuffle the eligible list per transaction.
    """

    configuration: ConfigurationId
    exploration: ExplorationParams
    downtime: DowntimeParams | None = None
    strategy: RoutingStrategy = RoutingStrategy.DYNAMIC
    priority: tuple[GatewayId, ...] = field(default=())


@dataclass(frozen=True)
class ExperimentPlan:
    arms: tuple[ExperimentArm, ...]

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple(self.arms))
        if not self.arms:
            raise InvalidParameterError("experiment plan needs at least one arm")
        ids = [arm.configuration for arm in self.arms]
        if len(set(ids)) != len(ids):
            raise InvalidParameterError(f"duplicate arm ids in plan: {ids}")

    @property
    def split(self) -> tuple[float, ...]:
        return tuple(1.0 / len(self.arms) for _ in self.arms)

    def arm(self, configuration: ConfigurationId) -> ExperimentArm:
        for arm in self.arms:
            if arm.configuration == configuration:
                return arm
        raise InvalidParameterError(f"unknown arm {configuration!r}")


def assign_arm(txn_id: str, plan: ExperimentPlan, seed: int = 0) -> ConfigurationId:
    """Pure function of (txn_id, seed, plan): sha256 of "seed:txn_id" modulo the arm count."""
    if len(plan.arms) == 1:
        return plan.arms[0].configuration
    digest = hashlib.sha256(f"{seed}:{txn_id}".encode("utf-8")).hexdigest()
    return plan.arms[int(digest[:16], 16) % len(plan.arms)].configuration


def _sr_percent(successes: int, txns: int) -> float:
    return successes / txns * 100.0 if txns else float("nan")


def compare_arms(arm_metrics: list[dict]) -> pd.DataFrame:
    """
    Per-arm summary sorted by SR descending. Arms without traffic get a null SR and sort last.

    Args:
        arm_metrics: Dicts with arm, dimension, txn_count, success_count

    Returns:
        DataFrame with ARM_REPORT_COLUMNS
    """
    total = sum(int(m["txn_count"]) for m in arm_metrics)
    rows = []
    for m in arm_metrics:
        txns = int(m["txn_count"])
        rows.append({
            "arm": m["arm"],
            "dimension": str(m.get("dimension", "")),
            "txn_count": txns,
            "sr_percent": _sr_percent(int(m["success_count"]), txns),
            "traffic_share_percent": txns / total * 100.0 if total else float("nan"),
        })
    df = pd.DataFrame(rows, columns=ARM_REPORT_COLUMNS)
    return df.sort_values(["sr_percent", "arm"], ascending=[False, True], na_position="last",
                          kind="mergesort").reset_index(drop=True)


def compare_gateways(gateway_metrics: list[dict]) -> pd.DataFrame:
    """
    Per-(arm, gateway) SR and traffic share within the arm.

    Args:
        gateway_metrics: Dicts with arm, gateway, txn_count, success_count
    """
    df = pd.DataFrame(gateway_metrics, columns=["arm", "gateway", "txn_count", "success_count"])
    if df.empty:
        return pd.DataFrame(columns=GATEWAY_REPORT_COLUMNS)
    arm_totals = df.groupby("arm")["txn_count"].transform("sum")
    df["sr_percent"] = [_sr_percent(s, t) for s, t in zip(df["success_count"], df["txn_count"])]
    df["traffic_share_percent"] = df["txn_count"] / arm_totals.where(arm_totals > 0) * 100.0
    df = df.sort_values(["arm", "gateway"], kind="mergesort").reset_index(drop=True)
    return df[GATEWAY_REPORT_COLUMNS]
