"""
Feedback Loop

Post-transaction sensing. Initiations are registered as pending entries with
two deadlines (failure timeout, success timeout); outcome feedback and
explicit apply_timeouts() calls resolve them into SR-window records and
health-score updates.

Exactly-once rules per transaction:
  - at most one SR-window record (explored transactions only)
  - at most one health reward (SUCCESS at or before the success deadline)
  - the pending entry is removed by the first applied or late event, or
    closed as timed out once the success deadline has passed

The loop is safe to share between threads. Its own lock covers the pending
index, so registration, feedback and timeouts for different txn-ids may run
concurrently and every entry is closed exactly once. Score updates also take
the store lock, which serializes writes to one (configuration, dimension,
gateway) triple.
"""
import heapq
import threading
from dataclasses import dataclass, field

from routing_engine.debug import dprint, is_debug_enabled
from routing_engine.domain import ConfigurationId, FeedbackConfig, GatewayId, TxnStatus
from routing_engine.errors import DuplicateTransactionError, InvalidParameterError
from routing_engine.health_score import penalize, reward
from routing_engine.replay import ReplayEvent, ReplayLog
from routing_engine.score_store import ScoreStore


@dataclass
class PendingTransaction:
    txn_id: str
    gateway: GatewayId
    dimension: str
    configuration: ConfigurationId
    explored: bool
    initiated_at: int
    deadline_penalize: int
    deadline_reward: int
    sr_recorded: bool = False

    def __post_init__(self):
        if self.deadline_penalize > self.deadline_reward:
            raise InvalidParameterError(
                f"transaction {self.txn_id}: penalize deadline {self.deadline_penalize} "
                f"after reward deadline {self.deadline_reward}"
            )


@dataclass(frozen=True)
class FeedbackEvent:
    txn_id: str
    kind: TxnStatus
    at: int


@dataclass
class FeedbackCounters:
    initiated: int = 0
    init_failures: int = 0
    applied_success: int = 0
    applied_failure: int = 0
    late_success: int = 0
    late_failure: int = 0
    unknown_feedback: int = 0
    default_penalize: int = 0
    timed_out: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class FeedbackLoop:
    store: ScoreStore
    config: FeedbackConfig = field(default_factory=FeedbackConfig)
    replay_log: ReplayLog | None = None
    debug: bool | None = None

    def __post_init__(self):
        self.debug = is_debug_enabled(self.debug)
        self.pending: dict[str, PendingTransaction] = {}
        self.counters = FeedbackCounters()
        # txn-id -> time after which the id may be registered again
        self._seen: dict[str, int] = {}
        self._penalize_heap: list[tuple[int, int, str]] = []
        self._reward_heap: list[tuple[int, int, str]] = []
        self._expiry_heap: list[tuple[int, int, str]] = []
        self._seq = 0
        # Latest time observed; SR records are stamped no earlier so windows stay time-ordered.
        self._watermark = 0
        # Pending index, heaps and counters. Score updates additionally take store.lock.
        self._lock = threading.Lock()

    def _advance(self, t: int) -> int:
        if t > self._watermark:
            self._watermark = int(t)
        return self._watermark

    def _log(self, event: ReplayEvent, txn_id: str, gateway: str, dimension: str, config: str,
             explored: bool, ts: int):
        if self.replay_log is not None:
            self.replay_log.append(event, txn_id, gateway, dimension, config, explored, ts)

    def make_pending(self, txn_id: str, gateway: GatewayId, dimension: str, configuration: ConfigurationId,
                     explored: bool, initiated_at: int) -> PendingTransaction:
        return PendingTransaction(
            txn_id=txn_id,
            gateway=gateway,
            dimension=str(dimension),
            configuration=configuration,
            explored=explored,
            initiated_at=int(initiated_at),
            deadline_penalize=int(initiated_at) + self.config.failure_timeout_ms,
            deadline_reward=int(initiated_at) + self.config.success_timeout_ms,
        )

    # ------------------------------------------------------------------
    # Health and SR primitives
    # ------------------------------------------------------------------
    def _health_penalize(self, txn_id, gateway, dimension, configuration, explored, at):
        downtime = self.store.downtime_params(configuration)
        if downtime is None:
            return
        with self.store.lock:
            self.store.update_health(configuration, dimension, gateway,
                                     lambda h: penalize(h, downtime.reward_factor))
            self._log(ReplayEvent.HEALTH_PENALIZE, txn_id, gateway, dimension, configuration, explored, at)

    def _health_reward(self, p: PendingTransaction, at: int):
        downtime = self.store.downtime_params(p.configuration)
        if downtime is None:
            return
        with self.store.lock:
            self.store.update_health(p.configuration, p.dimension, p.gateway,
                                     lambda h: reward(h, downtime.reward_factor))
            self._log(ReplayEvent.HEALTH_REWARD, p.txn_id, p.gateway, p.dimension, p.configuration, p.explored, at)

    def _record_sr(self, txn_id, gateway, dimension, configuration, status: TxnStatus):
        at = self._watermark
        event = ReplayEvent.SR_SUCCESS if status == TxnStatus.SUCCESS else ReplayEvent.SR_FAILURE
        with self.store.lock:
            self.store.record_outcome(configuration, dimension, gateway, status, at)
            self._log(event, txn_id, gateway, dimension, configuration, True, at)

    def _settle_sr(self, p: PendingTransaction, status: TxnStatus):
        if p.sr_recorded:
            return
        p.sr_recorded = True
        if p.explored:
            self._record_sr(p.txn_id, p.gateway, p.dimension, p.configuration, status)

    def _default_penalize(self, p: PendingTransaction):
        if p.sr_recorded:
            return
        if p.explored:
            self.counters.default_penalize += 1
            dprint(self.debug, f"[FEEDBACK] default penalize {p.txn_id} on {p.gateway}")
        self._settle_sr(p, TxnStatus.FAILURE)

    def _close(self, p: PendingTransaction):
        self.pending.pop(p.txn_id, None)

    def _forget_expired(self, now: int):
        while self._expiry_heap and self._expiry_heap[0][0] < now:
            expires_at, _, txn_id = heapq.heappop(self._expiry_heap)
            if self._seen.get(txn_id) == expires_at and txn_id not in self.pending:
                del self._seen[txn_id]

    # ------------------------------------------------------------------
    # Operations
    # ------------------------------------------------------------------
    def register_initiation(self, p: PendingTransaction) -> None:
        """Store the pending entry and penalize the initiated gateway's health score."""
        with self._lock:
            if p.txn_id in self._seen:
                raise DuplicateTransactionError(f"transaction {p.txn_id} was already initiated")
            self._advance(p.initiated_at)
            self._seq += 1
            expires_at = p.deadline_reward + self.config.duplicate_grace_ms
            self._seen[p.txn_id] = expires_at
            self.pending[p.txn_id] = p
            self.counters.initiated += 1

            heapq.heappush(self._penalize_heap, (p.deadline_penalize, self._seq, p.txn_id))
            heapq.heappush(self._reward_heap, (p.deadline_reward, self._seq, p.txn_id))
            heapq.heappush(self._expiry_heap, (expires_at, self._seq, p.txn_id))
            self._health_penalize(p.txn_id, p.gateway, p.dimension, p.configuration, p.explored, p.initiated_at)

    def record_initiation_failure(self, txn_id: str, gateway: GatewayId, dimension: str,
                                  configuration: ConfigurationId, explored: bool, at: int) -> None:
        """
        Cascade attempt that failed to initiate.

        The attempt still counts as an initiation for the health score; an
        exploration-flagged attempt also records an SR FAILURE.
        """
        with self._lock:
            self._advance(at)
            self.counters.init_failures += 1
            dimension = str(dimension)
            self._health_penalize(txn_id, gateway, dimension, configuration, explored, at)
            if explored:
                self._record_sr(txn_id, gateway, dimension, configuration, TxnStatus.FAILURE)

    def submit_feedback(self, ev: FeedbackEvent) -> str:
        """
        Apply one outcome event.

        Returns the disposition: "applied", "late" or "unknown".
        """
        with self._lock:
            p = self.pending.get(ev.txn_id)
            if p is None:
                self._advance(ev.at)
                self.counters.unknown_feedback += 1
                dprint(self.debug, f"[FEEDBACK] ignoring {ev.kind} for unknown or closed txn {ev.txn_id}")
                return "unknown"
            if ev.at < p.initiated_at:
                raise InvalidParameterError(
                    f"feedback for {ev.txn_id} at {ev.at} precedes initiation {p.initiated_at}")
            self._advance(ev.at)

            # Deadlines of this transaction that already passed fire first.
            if ev.at > p.deadline_penalize:
                self._default_penalize(p)

            kind = TxnStatus(ev.kind)
            disposition = "applied"
            if kind == TxnStatus.SUCCESS:
                if ev.at <= p.deadline_reward:
                    self._health_reward(p, ev.at)
                    self._settle_sr(p, TxnStatus.SUCCESS)
                    self.counters.applied_success += 1
                else:
                    self.counters.late_success += 1
                    disposition = "late"
            else:
                if ev.at <= p.deadline_penalize:
                    self._settle_sr(p, TxnStatus.FAILURE)
                    self.counters.applied_failure += 1
                else:
                    self.counters.late_failure += 1
                    disposition = "late"

            if disposition == "late":
                dprint(self.debug, f"[FEEDBACK] late {kind.value} for {ev.txn_id} at {ev.at}")
            self._close(p)
            return disposition

    def apply_timeouts(self, now: int) -> int:
        """
        Fire every deadline strictly before `now`, in deadline order.

        Past the failure deadline an unresolved explored transaction gets a
        default SR FAILURE; past the success deadline the entry is closed
        without a health reward. Returns the number of entries closed.
        Txn-ids past their duplicate grace are released as well.
        """
        with self._lock:
            self._advance(now)
            while self._penalize_heap and self._penalize_heap[0][0] < now:
                _, _, txn_id = heapq.heappop(self._penalize_heap)
                p = self.pending.get(txn_id)
                if p is not None:
                    self._default_penalize(p)

            closed = 0
            while self._reward_heap and self._reward_heap[0][0] < now:
                _, _, txn_id = heapq.heappop(self._reward_heap)
                p = self.pending.get(txn_id)
                if p is None:
                    continue
                self._default_penalize(p)
                self._close(p)
                self.counters.timed_out += 1
                closed += 1

            self._forget_expired(now)
            return closed

    @property
    def pending_count(self) -> int:
        with self._lock:
            return len(self.pending)

    @property
    def reserved_count(self) -> int:
        """Txn-ids still rejected as duplicates."""
        with self._lock:
            return len(self._seen)
