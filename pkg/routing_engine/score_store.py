"""
Score Store

In-memory score spaces keyed by (configuration, dimension, gateway). Every
configuration gets its own windows and health scores, so experiment arms
never read or write each other's state.
"""
import threading
from collections.abc import Callable
from dataclasses import dataclass

from routing_engine.domain import ConfigurationId, DowntimeParams, ExplorationParams, GatewayId
from routing_engine.errors import InvalidParameterError
from routing_engine.health_score import HealthScore
from routing_engine.sr_window import SlidingWindow

ScoreKey = tuple[str, str, str]


@dataclass(frozen=True)
class ScoreSnapshot:
    """Read-only view of one (configuration, dimension) handed to the decision engine."""

    configuration: ConfigurationId
    dimension: str
    sr_scores: dict
    health: dict
    taken_at: int


class ScoreStore:

    def __init__(self, cold_start_score: float = 1.0, min_samples: int = 10, track_access: bool = False):
        self.cold_start_score = cold_start_score
        self.min_samples = min_samples
        self.windows: dict[ScoreKey, SlidingWindow] = {}
        self.health_scores: dict[ScoreKey, HealthScore] = {}
        self._exploration: dict[ConfigurationId, ExplorationParams] = {}
        self._downtime: dict[ConfigurationId, DowntimeParams | None] = {}
        self.track_access = track_access
        self.accessed_keys: set[ScoreKey] = set()
        # Guards every score space. Reentrant so a compound update can call the primitives below.
        self.lock = threading.RLock()

    def configure(self, configuration: ConfigurationId, exploration: ExplorationParams,
                  downtime: DowntimeParams | None = None):
        self._exploration[configuration] = exploration
        self._downtime[configuration] = downtime

    def exploration_params(self, configuration: ConfigurationId) -> ExplorationParams:
        try:
            return self._exploration[configuration]
        except KeyError:
            raise InvalidParameterError(f"configuration {configuration!r} is not registered") from None

    def downtime_params(self, configuration: ConfigurationId) -> DowntimeParams | None:
        self.exploration_params(configuration)
        return self._downtime.get(configuration)

    def _touch(self, key: ScoreKey):
        if self.track_access:
            self.accessed_keys.add(key)

    def window(self, configuration: ConfigurationId, dimension: str, gateway: GatewayId) -> SlidingWindow:
        key = (configuration, str(dimension), gateway)
        with self.lock:
            self._touch(key)
            window = self.windows.get(key)
            if window is None:
                params = self.exploration_params(configuration)
                window = SlidingWindow(
                    capacity=params.window_size,
                    max_age_ms=params.max_window_age_ms,
                    cold_start_score=self.cold_start_score,
                    min_samples=self.min_samples,
                )
                self.windows[key] = window
            return window

    def record_outcome(self, configuration: ConfigurationId, dimension: str, gateway: GatewayId, status, at: int):
        with self.lock:
            self.window(configuration, dimension, gateway).record_outcome(status, at)

    def health(self, configuration: ConfigurationId, dimension: str, gateway: GatewayId) -> HealthScore:
        key = (configuration, str(dimension), gateway)
        with self.lock:
            self._touch(key)
            return self.health_scores.get(key, HealthScore())

    def set_health(self, configuration: ConfigurationId, dimension: str, gateway: GatewayId, score: HealthScore):
        key = (configuration, str(dimension), gateway)
        with self.lock:
            self._touch(key)
            self.health_scores[key] = score

    def update_health(self, configuration: ConfigurationId, dimension: str, gateway: GatewayId,
                      update: Callable[[HealthScore], HealthScore]) -> HealthScore:
        """Read-modify-write of one health score as a single step."""
        with self.lock:
            score = update(self.health(configuration, dimension, gateway))
            self.set_health(configuration, dimension, gateway, score)
            return score

    def snapshot(self, configuration: ConfigurationId, dimension: str, gateways, now: int) -> ScoreSnapshot:
        with self.lock:
            sr_scores = {}
            health = {}
            self.exploration_params(configuration)
            for gateway in gateways:
                key = (configuration, str(dimension), gateway)
                self._touch(key)
                # Reads never create score spaces; only recorded outcomes do.
                window = self.windows.get(key)
                sr_scores[gateway] = window.score(now) if window is not None else self.cold_start_score
                health[gateway] = self.health(configuration, dimension, gateway)
            return ScoreSnapshot(
                configuration=configuration,
                dimension=str(dimension),
                sr_scores=sr_scores,
                health=health,
                taken_at=int(now),
            )

    def warm_scores(self, configuration: ConfigurationId, dimension: str, gateways, now: int) -> dict | None:
        """Observed window rates of `gateways`, or None while any of them is still cold."""
        with self.lock:
            scores = {}
            for gateway in gateways:
                window = self.windows.get((configuration, str(dimension), gateway))
                if window is None or not window.is_warm(now):
                    return None
                scores[gateway] = window.score(now)
            return scores

    def state_rows(self, now: int | None = None) -> list[dict]:
        """One row per known score space, sorted by key, for reports and replay comparisons."""
        with self.lock:
            keys = sorted(set(self.windows) | set(self.health_scores))
            rows = []
            for configuration, dimension, gateway in keys:
                window = self.windows.get((configuration, dimension, gateway))
                health = self.health_scores.get((configuration, dimension, gateway), HealthScore())
                if window is not None and now is not None:
                    window.evict_stale(now)
                rows.append({
                    "config": configuration,
                    "dimension": dimension,
                    "gateway": gateway,
                    "window_entries": len(window) if window is not None else 0,
                    "window_successes": window.success_count if window is not None else 0,
                    "sr_score": window.score(now) if window is not None else self.cold_start_score,
                    "health_value": health.value,
                    "health_state": health.state.value,
                })
        return rows
