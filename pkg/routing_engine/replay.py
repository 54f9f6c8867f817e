"""
Replay Log

Every score mutation the engine applies is appended here as one row:
(event_type, txn_id, gateway, dimension, config, explored, timestamp).
Feeding the rows back through rebuild_store() with the same arm parameters
reproduces the windows and health scores bit-exactly.
"""
from dataclasses import replace
from enum import Enum

import pandas as pd

from routing_engine.domain import GatewayState, TxnStatus
from routing_engine.errors import InvalidParameterError
from routing_engine.health_score import penalize, revive, reward
from routing_engine.score_store import ScoreStore

REPLAY_COLUMNS = ["event_type", "txn_id", "gateway", "dimension", "config", "explored", "timestamp"]


class ReplayEvent(str, Enum):
    HEALTH_PENALIZE = "HEALTH_PENALIZE"
    HEALTH_REWARD = "HEALTH_REWARD"
    SR_SUCCESS = "SR_SUCCESS"
    SR_FAILURE = "SR_FAILURE"
    STATE_DOWN = "STATE_DOWN"
    STATE_UP = "STATE_UP"
    REVIVE = "REVIVE"


class ReplayLog:

    def __init__(self):
        self.rows: list[dict] = []

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, event_type: ReplayEvent, txn_id: str, gateway: str, dimension: str, config: str,
               explored: bool, timestamp: int):
        self.rows.append({
            "event_type": ReplayEvent(event_type).value,
            "txn_id": txn_id or "",
            "gateway": gateway,
            "dimension": str(dimension),
            "config": config,
            "explored": bool(explored),
            "timestamp": int(timestamp),
        })

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=REPLAY_COLUMNS)

    def write_csv(self, csv_path: str) -> None:
        self.to_frame().to_csv(csv_path, index=False, encoding="utf-8")
        print(f"[✓] Replay log: {len(self.rows)} events -> {csv_path}")


def read_replay_log(csv_path: str) -> pd.DataFrame:
    df = pd.read_csv(csv_path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [c for c in REPLAY_COLUMNS if c not in df.columns]
    if missing:
        raise InvalidParameterError(f"replay log {csv_path} is missing columns {missing}")
    df["timestamp"] = df["timestamp"].astype("int64")
    df["explored"] = df["explored"].str.strip().str.lower().isin(["true", "1"])
    return df


def rebuild_store(log: pd.DataFrame, arms: dict, cold_start_score: float = 1.0, min_samples: int = 10) -> ScoreStore:
    """
    Re-apply a replay log in row order.

    Args:
        log: Rows with REPLAY_COLUMNS (a ReplayLog frame or read_replay_log output)
        arms: configuration -> (ExplorationParams, DowntimeParams | None)
        cold_start_score: Window cold-start score used by the original run
        min_samples: Window min-samples used by the original run

    Returns:
        A ScoreStore holding the rebuilt windows and health scores
    """
    store = ScoreStore(cold_start_score=cold_start_score, min_samples=min_samples)
    for configuration, (exploration, downtime) in arms.items():
        store.configure(configuration, exploration, downtime)

    for row in log.itertuples(index=False):
        event = ReplayEvent(row.event_type)
        config, dimension, gateway, ts = row.config, row.dimension, row.gateway, int(row.timestamp)

        if event == ReplayEvent.SR_SUCCESS:
            store.record_outcome(config, dimension, gateway, TxnStatus.SUCCESS, ts)
            continue
        if event == ReplayEvent.SR_FAILURE:
            store.record_outcome(config, dimension, gateway, TxnStatus.FAILURE, ts)
            continue

        downtime = store.downtime_params(config)
        if downtime is None:
            raise InvalidParameterError(f"replay event {event.value} for {config!r}, which has no downtime params")
        h = store.health(config, dimension, gateway)
        if event == ReplayEvent.HEALTH_PENALIZE:
            h = penalize(h, downtime.reward_factor)
        elif event == ReplayEvent.HEALTH_REWARD:
            h = reward(h, downtime.reward_factor)
        elif event == ReplayEvent.STATE_DOWN:
            h = replace(h, state=GatewayState.DOWN, last_transition=ts)
        elif event == ReplayEvent.STATE_UP:
            h = replace(h, state=GatewayState.UP, last_transition=ts)
        elif event == ReplayEvent.REVIVE:
            h, revived = revive(h, downtime.reward_factor, ts, downtime.revival_interval_ms)
            if not revived:
                raise InvalidParameterError(f"replay REVIVE at {ts} for {gateway} was not due")
        store.set_health(config, dimension, gateway, h)

    return store
