"""
Shared vocabulary: gateways, dimensions, transaction outcomes and the
per-dimension parameter records used by scoring, routing and downtime detection.

All types here are immutable values. Timestamps are integer milliseconds.
"""
from dataclasses import dataclass
from enum import Enum

from routing_engine.config import DEFAULT_DIMENSION_SCHEMA
from routing_engine.errors import DuplicateFieldError, InvalidParameterError

GatewayId = str
ConfigurationId = str

KEY_SEPARATOR = "|"
KEY_ASSIGN = "="

TWO_HOURS_MS = 2 * 60 * 60 * 1000


def seconds_to_ms(seconds: float) -> int:
    return int(round(float(seconds) * 1000))


class TxnStatus(str, Enum):
    SUCCESS = "SUCCESS"
    FAILURE = "FAILURE"


class GatewayState(str, Enum):
    UP = "UP"
    DOWN = "DOWN"


@dataclass(frozen=True)
class DimensionKey:
    """
    Ordered (field, value) pairs identifying one score space.

    Build through canonical_key() so field order follows the configured schema;
    two keys built from the same entry set then compare and hash equal.
    """

    entries: tuple[tuple[str, str], ...] = ()

    def serialize(self) -> str:
        return KEY_SEPARATOR.join(f"{name}{KEY_ASSIGN}{value}" for name, value in self.entries)

    def __str__(self) -> str:
        return self.serialize()

    @classmethod
    def parse(cls, text: str, schema: tuple[str, ...] = DEFAULT_DIMENSION_SCHEMA) -> "DimensionKey":
        text = "" if text is None else str(text)
        if not text.strip():
            return GLOBAL_DIMENSION
        entries = []
        for part in text.split(KEY_SEPARATOR):
            if KEY_ASSIGN not in part:
                raise InvalidParameterError(f"malformed dimension entry {part!r} in {text!r}")
            name, value = part.split(KEY_ASSIGN, 1)
            entries.append((name, value))
        return canonical_key(entries, schema=schema)


GLOBAL_DIMENSION = DimensionKey(())


def canonical_key(entries, schema: tuple[str, ...] = DEFAULT_DIMENSION_SCHEMA) -> DimensionKey:
    """
    Build a DimensionKey with fields in schema order.

    Fields outside the schema follow the schema fields, sorted by name.
    The empty entry list is the global dimension.
    """
    seen = {}
    for name, value in entries:
        name = str(name)
        value = str(value)
        if not name:
            raise InvalidParameterError("dimension field name must be non-empty")
        if KEY_SEPARATOR in name or KEY_ASSIGN in name or KEY_SEPARATOR in value:
            raise InvalidParameterError(f"dimension entry {name}={value} contains a reserved character")
        if name in seen:
            raise DuplicateFieldError(f"duplicate dimension field {name!r}")
        seen[name] = value

    position = {name: i for i, name in enumerate(schema)}
    ordered = sorted(seen, key=lambda name: (0, position[name], "") if name in position else (1, 0, name))
    return DimensionKey(tuple((name, seen[name]) for name in ordered))


@dataclass(frozen=True)
class TransactionOutcome:
    txn_id: str
    gateway: GatewayId
    status: TxnStatus
    initiated_at: int
    resolved_at: int
    explored: bool

    COLUMNS = ("txn_id", "gateway", "status", "initiated_at", "resolved_at", "explored")

    def __post_init__(self):
        if self.resolved_at < self.initiated_at:
            raise InvalidParameterError(
                f"transaction {self.txn_id}: resolved_at {self.resolved_at} < initiated_at {self.initiated_at}"
            )

    def to_row(self) -> dict:
        return {
            "txn_id": self.txn_id,
            "gateway": self.gateway,
            "status": self.status.value,
            "initiated_at": int(self.initiated_at),
            "resolved_at": int(self.resolved_at),
            "explored": bool(self.explored),
        }

    @classmethod
    def from_row(cls, row: dict) -> "TransactionOutcome":
        explored = row["explored"]
        if not isinstance(explored, bool):
            explored = str(explored).strip().lower() in ("1", "true", "t", "yes", "y")
        return cls(
            txn_id=str(row["txn_id"]),
            gateway=str(row["gateway"]),
            status=TxnStatus(str(row["status"])),
            initiated_at=int(row["initiated_at"]),
            resolved_at=int(row["resolved_at"]),
            explored=explored,
        )


@dataclass(frozen=True)
class ExplorationParams:
    """
    Exploration factor e (per-gateway traffic share reserved for exploration),
    window size n and the recency bound on window entries.

    e = 0 disables exploration (rule-based arms, single-gateway dimensions).
    """

    exploration_factor: float
    window_size: int
    max_window_age_ms: int = TWO_HOURS_MS
    clamped: bool = False
    degenerate: bool = False

    def __post_init__(self):
        if not 0.0 <= self.exploration_factor <= 0.5:
            raise InvalidParameterError(f"exploration factor must be in [0, 0.5], got {self.exploration_factor}")
        if int(self.window_size) < 1:
            raise InvalidParameterError(f"window size must be >= 1, got {self.window_size}")
        if self.max_window_age_ms <= 0:
            raise InvalidParameterError(f"max window age must be positive, got {self.max_window_age_ms}")


@dataclass(frozen=True)
class DowntimeParams:
    """Reward factor a, DOWN threshold, sigma factor and revival interval of one dimension."""

    reward_factor: float
    threshold: float
    sigma_factor: float
    revival_interval_ms: int = 5 * 60 * 1000

    def __post_init__(self):
        if not 0.0 < self.reward_factor < 1.0:
            raise InvalidParameterError(f"reward factor must be in (0, 1), got {self.reward_factor}")
        if not 0.0 < self.threshold < 1.0:
            raise InvalidParameterError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.sigma_factor <= 0:
            raise InvalidParameterError(f"sigma factor must be positive, got {self.sigma_factor}")
        if self.revival_interval_ms <= 0:
            raise InvalidParameterError(f"revival interval must be positive, got {self.revival_interval_ms}")


@dataclass(frozen=True)
class FeedbackConfig:
    success_timeout_ms: int = 180_000
    failure_timeout_ms: int = 90_000
    # A txn-id stays reserved this long past its success deadline, then may be reused.
    duplicate_grace_ms: int = 3_600_000

    def __post_init__(self):
        if not self.success_timeout_ms >= self.failure_timeout_ms > 0:
            raise InvalidParameterError(
                "feedback timeouts must satisfy success_timeout >= failure_timeout > 0, "
                f"got {self.success_timeout_ms} / {self.failure_timeout_ms}"
            )
        if self.duplicate_grace_ms < 0:
            raise InvalidParameterError(f"duplicate grace must be >= 0, got {self.duplicate_grace_ms}")
