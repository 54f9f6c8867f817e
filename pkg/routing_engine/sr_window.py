"""
Sliding Window

Fixed-capacity, recency-bounded FIFO of exploration outcomes for one
(configuration, dimension, gateway) score space. The success count is kept
incrementally and always equals a recount of the retained entries.
"""
from collections import deque

import pandas as pd

from routing_engine.domain import TWO_HOURS_MS, TxnStatus
from routing_engine.errors import InvalidParameterError, OutOfOrderOutcomeError

WINDOW_EXPORT_COLUMNS = ["dimension", "config", "gateway", "timestamp", "status"]


class SlidingWindow:

    def __init__(self, capacity: int, max_age_ms: int = TWO_HOURS_MS, cold_start_score: float = 1.0,
                 min_samples: int = 10):
        """
        Args:
            capacity: Window size n; the earliest entry is evicted beyond it
            max_age_ms: Entries older than now - max_age_ms are dropped
            cold_start_score: Score reported while the window is under-filled
            min_samples: Entries needed before the observed rate is reported
                (capped at capacity so a full small window is never cold)
        """
        if int(capacity) < 1:
            raise InvalidParameterError(f"window capacity must be >= 1, got {capacity}")
        if not 0.0 <= cold_start_score <= 1.0:
            raise InvalidParameterError(f"cold-start score must be in [0, 1], got {cold_start_score}")
        self.capacity = int(capacity)
        self.max_age_ms = int(max_age_ms)
        self.cold_start_score = float(cold_start_score)
        self.min_samples = max(1, int(min_samples))
        self.entries = deque()
        self.success_count = 0

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def newest_timestamp(self) -> int | None:
        return self.entries[-1][0] if self.entries else None

    def _pop_oldest(self):
        _, status = self.entries.popleft()
        if status == TxnStatus.SUCCESS:
            self.success_count -= 1

    def record_outcome(self, status: TxnStatus, at: int) -> "SlidingWindow":
        status = TxnStatus(status)
        newest = self.newest_timestamp
        if newest is not None and at < newest:
            raise OutOfOrderOutcomeError(f"outcome at {at} is older than newest window entry at {newest}")

        self.evict_stale(at)
        self.entries.append((int(at), status))
        if status == TxnStatus.SUCCESS:
            self.success_count += 1
        while len(self.entries) > self.capacity:
            self._pop_oldest()
        return self

    def evict_stale(self, now: int, max_age_ms: int | None = None) -> "SlidingWindow":
        max_age_ms = self.max_age_ms if max_age_ms is None else int(max_age_ms)
        cutoff = now - max_age_ms
        while self.entries and self.entries[0][0] < cutoff:
            self._pop_oldest()
        return self

    def score(self, now: int | None = None) -> float:
        """
        Success rate over the retained entries.

        Divides by the current entry count rather than the capacity; under
        min(min_samples, capacity) entries the cold-start score is returned.
        """
        if not self.is_warm(now):
            return self.cold_start_score
        return self.success_count / len(self.entries)

    def is_warm(self, now: int | None = None) -> bool:
        """True once the window holds enough entries to report its own rate."""
        if now is not None:
            self.evict_stale(now)
        return len(self.entries) >= min(self.min_samples, self.capacity)

    def statuses(self) -> list[TxnStatus]:
        return [status for _, status in self.entries]

    def to_rows(self, dimension: str, config: str, gateway: str) -> list[dict]:
        return [
            {"dimension": dimension, "config": config, "gateway": gateway, "timestamp": ts, "status": status.value}
            for ts, status in self.entries
        ]


def export_windows_csv(windows: dict, csv_path: str) -> int:
    """
    Dump window contents keyed by (config, dimension, gateway) for debugging and replay.

    Returns the number of rows written.
    """
    rows = []
    for (config, dimension, gateway), window in sorted(windows.items(), key=lambda item: item[0]):
        rows.extend(window.to_rows(dimension, config, gateway))
    pd.DataFrame(rows, columns=WINDOW_EXPORT_COLUMNS).to_csv(csv_path, index=False, encoding="utf-8")
    print(f"[✓] Exported {len(rows)} window entries to {csv_path}")
    return len(rows)
