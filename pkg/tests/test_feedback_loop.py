import threading
import unittest
from collections import Counter, defaultdict

import numpy as np

from routing_engine.domain import DowntimeParams, ExplorationParams, FeedbackConfig, TxnStatus
from routing_engine.errors import DuplicateTransactionError, InvalidParameterError
from routing_engine.feedback_loop import FeedbackEvent, FeedbackLoop, PendingTransaction
from routing_engine.replay import ReplayLog, rebuild_store
from routing_engine.score_store import ScoreStore

EXPLORATION = ExplorationParams(0.1, 20)
DOWNTIME = DowntimeParams(reward_factor=0.1, threshold=0.5, sigma_factor=3.0)
T0 = 1_000_000


def _loop(downtime=DOWNTIME, replay=True):
    store = ScoreStore(min_samples=1)
    store.configure("dyn", EXPLORATION, downtime)
    return FeedbackLoop(store, FeedbackConfig(), ReplayLog() if replay else None)


def _initiate(loop, txn_id="t1", explored=True, at=T0, gateway="GW1"):
    loop.register_initiation(loop.make_pending(txn_id, gateway, "", "dyn", explored, at))


def _window(loop, gateway="GW1"):
    return loop.store.window("dyn", "", gateway)


def _health(loop, gateway="GW1"):
    return loop.store.health("dyn", "", gateway).value


class TestPendingTransaction(unittest.TestCase):

    def test_deadlines_ordered(self):
        with self.assertRaises(InvalidParameterError):
            PendingTransaction("t1", "GW1", "", "dyn", False, 0, deadline_penalize=10, deadline_reward=5)

    def test_make_pending_deadlines(self):
        p = _loop().make_pending("t1", "GW1", "", "dyn", True, T0)
        self.assertEqual(p.deadline_penalize, T0 + 90_000)
        self.assertEqual(p.deadline_reward, T0 + 180_000)


class TestFeedbackLoop(unittest.TestCase):

    def test_initiation_penalizes_health(self):
        loop = _loop()
        _initiate(loop)
        self.assertAlmostEqual(_health(loop), 0.9)
        self.assertEqual(loop.pending_count, 1)

    def test_duplicate_initiation(self):
        loop = _loop()
        _initiate(loop)
        with self.assertRaises(DuplicateTransactionError):
            _initiate(loop)

    def test_success_on_time(self):
        loop = _loop()
        _initiate(loop)
        self.assertEqual(loop.submit_feedback(FeedbackEvent("t1", TxnStatus.SUCCESS, T0 + 90_000)), "applied")
        self.assertEqual(_window(loop).statuses(), [TxnStatus.SUCCESS])
        self.assertAlmostEqual(_health(loop), 1.0)
        self.assertEqual(loop.pending_count, 0)

    def test_success_after_failure_deadline_counts_as_sr_failure(self):
        loop = _loop()
        _initiate(loop)
        self.assertEqual(loop.submit_feedback(FeedbackEvent("t1", TxnStatus.SUCCESS, T0 + 90_001)), "applied")
        self.assertEqual(_window(loop).statuses(), [TxnStatus.FAILURE])
        self.assertAlmostEqual(_health(loop), 1.0)
        self.assertEqual(loop.counters.default_penalize, 1)
        self.assertEqual(loop.counters.applied_success, 1)

    def test_success_after_success_deadline_is_late(self):
        loop = _loop()
        _initiate(loop)
        self.assertEqual(loop.submit_feedback(FeedbackEvent("t1", TxnStatus.SUCCESS, T0 + 180_001)), "late")
        self.assertEqual(_window(loop).statuses(), [TxnStatus.FAILURE])
        self.assertAlmostEqual(_health(loop), 0.9)
        self.assertEqual(loop.counters.late_success, 1)

    def test_late_failure(self):
        loop = _loop()
        _initiate(loop)
        self.assertEqual(loop.submit_feedback(FeedbackEvent("t1", TxnStatus.FAILURE, T0 + 95_000)), "late")
        self.assertEqual(_window(loop).statuses(), [TxnStatus.FAILURE])
        self.assertEqual(loop.counters.late_failure, 1)

    def test_failure_on_time(self):
        loop = _loop()
        _initiate(loop)
        loop.submit_feedback(FeedbackEvent("t1", TxnStatus.FAILURE, T0 + 1000))
        self.assertEqual(_window(loop).statuses(), [TxnStatus.FAILURE])
        self.assertAlmostEqual(_health(loop), 0.9)
        self.assertEqual(loop.counters.applied_failure, 1)

    def test_duplicate_feedback_is_unknown(self):
        loop = _loop()
        _initiate(loop)
        loop.submit_feedback(FeedbackEvent("t1", TxnStatus.SUCCESS, T0 + 1000))
        self.assertEqual(loop.submit_feedback(FeedbackEvent("t1", TxnStatus.SUCCESS, T0 + 2000)), "unknown")
        self.assertEqual(len(_window(loop)), 1)
        self.assertAlmostEqual(_health(loop), 1.0)
        self.assertEqual(loop.counters.unknown_feedback, 1)

    def test_feedback_before_initiation_rejected(self):
        loop = _loop()
        _initiate(loop)
        with self.assertRaises(InvalidParameterError):
            loop.submit_feedback(FeedbackEvent("t1", TxnStatus.SUCCESS, T0 - 1))

    def test_timeouts_fire_strictly_after_deadline(self):
        loop = _loop()
        _initiate(loop)
        self.assertEqual(loop.apply_timeouts(T0 + 90_000), 0)
        self.assertEqual(len(_window(loop)), 0)
        self.assertEqual(loop.apply_timeouts(T0 + 90_001), 0)
        self.assertEqual(_window(loop).statuses(), [TxnStatus.FAILURE])
        self.assertEqual(loop.counters.default_penalize, 1)
        self.assertEqual(loop.apply_timeouts(T0 + 180_000), 0)
        self.assertEqual(loop.apply_timeouts(T0 + 180_001), 1)
        self.assertEqual(loop.pending_count, 0)
        self.assertEqual(len(_window(loop)), 1)
        self.assertAlmostEqual(_health(loop), 0.9)

    def test_success_between_deadlines_after_tick(self):
        loop = _loop()
        _initiate(loop)
        loop.apply_timeouts(T0 + 100_000)
        loop.submit_feedback(FeedbackEvent("t1", TxnStatus.SUCCESS, T0 + 120_000))
        self.assertEqual(_window(loop).statuses(), [TxnStatus.FAILURE])
        self.assertAlmostEqual(_health(loop), 1.0)

    def test_feedback_after_timeout_closure_is_unknown(self):
        loop = _loop()
        _initiate(loop)
        loop.apply_timeouts(T0 + 200_000)
        self.assertEqual(loop.submit_feedback(FeedbackEvent("t1", TxnStatus.SUCCESS, T0 + 210_000)), "unknown")
        self.assertAlmostEqual(_health(loop), 0.9)

    def test_unexplored_never_touches_window(self):
        loop = _loop()
        _initiate(loop, explored=False)
        loop.apply_timeouts(T0 + 200_000)
        self.assertEqual(len(_window(loop)), 0)
        self.assertEqual(loop.counters.default_penalize, 0)
        self.assertEqual(loop.counters.timed_out, 1)

    def test_initiation_failure(self):
        loop = _loop()
        loop.record_initiation_failure("t1", "GW1", "", "dyn", True, T0)
        loop.record_initiation_failure("t2", "GW2", "", "dyn", False, T0)
        self.assertEqual(_window(loop, "GW1").statuses(), [TxnStatus.FAILURE])
        self.assertEqual(len(_window(loop, "GW2")), 0)
        self.assertAlmostEqual(_health(loop, "GW1"), 0.9)
        self.assertAlmostEqual(_health(loop, "GW2"), 0.9)
        self.assertEqual(loop.pending_count, 0)

    def test_no_downtime_params_skips_health(self):
        loop = _loop(downtime=None)
        _initiate(loop)
        loop.submit_feedback(FeedbackEvent("t1", TxnStatus.SUCCESS, T0 + 10))
        self.assertEqual(_health(loop), 1.0)
        self.assertEqual(_window(loop).statuses(), [TxnStatus.SUCCESS])
        self.assertTrue(all(r["event_type"].startswith("SR_") for r in loop.replay_log.rows))

    def test_txn_id_released_after_grace(self):
        loop = _loop()
        _initiate(loop)
        loop.apply_timeouts(T0 + 180_001)
        self.assertEqual(loop.pending_count, 0)
        with self.assertRaises(DuplicateTransactionError):
            _initiate(loop, at=T0 + 200_000)
        self.assertEqual(loop.reserved_count, 1)

        loop.apply_timeouts(T0 + 180_000 + 3_600_000 + 1)
        self.assertEqual(loop.reserved_count, 0)
        _initiate(loop, at=T0 + 4_000_000)
        self.assertEqual(loop.pending_count, 1)

    def test_negative_grace_rejected(self):
        with self.assertRaises(InvalidParameterError):
            FeedbackConfig(duplicate_grace_ms=-1)


class TestFeedbackConcurrency(unittest.TestCase):

    THREADS = 8
    PER_THREAD = 500

    def _in_threads(self, *targets):
        barrier = threading.Barrier(len(targets))
        errors = []

        def run(target):
            try:
                barrier.wait()
                target()
            except Exception as e:  # surfaced below
                errors.append(e)

        threads = [threading.Thread(target=run, args=(t,)) for t in targets]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        self.assertEqual(errors, [])

    def test_concurrent_initiations_lose_no_penalize(self):
        a = 0.001
        loop = _loop(DowntimeParams(reward_factor=a, threshold=0.5, sigma_factor=3.0), replay=False)

        def register(worker):
            def go():
                for i in range(self.PER_THREAD):
                    _initiate(loop, f"w{worker}-{i}", explored=False, at=T0 + i)
            return go

        self._in_threads(*(register(w) for w in range(self.THREADS)))

        total = self.THREADS * self.PER_THREAD
        expected = 1.0
        for _ in range(total):
            expected *= 1.0 - a
        self.assertEqual(loop.counters.initiated, total)
        self.assertEqual(loop.pending_count, total)
        self.assertAlmostEqual(_health(loop), expected, places=12)

    def test_feedback_racing_timeouts_records_sr_once(self):
        loop = _loop()
        n = 2000
        for i in range(n):
            _initiate(loop, f"t{i}", explored=True, at=T0)
        # Past the failure deadline, before the success deadline.
        at = T0 + 100_000

        def feedback():
            for i in range(n):
                loop.submit_feedback(FeedbackEvent(f"t{i}", TxnStatus.SUCCESS, at))

        def timeouts():
            for _ in range(200):
                loop.apply_timeouts(at)

        self._in_threads(feedback, timeouts)

        sr_rows = Counter(r["txn_id"] for r in loop.replay_log.rows if r["event_type"].startswith("SR_"))
        self.assertEqual(len(sr_rows), n)
        self.assertEqual(set(sr_rows.values()), {1})
        self.assertEqual(loop.counters.default_penalize, n)
        self.assertEqual(loop.counters.applied_success, n)
        self.assertEqual(loop.pending_count, 0)


class TestFeedbackInterleavings(unittest.TestCase):
    """Random orders of initiations, outcomes, duplicates and ticks."""

    ROUNDS = 200
    TXNS_PER_ROUND = 50

    def _run_round(self, rng):
        loop = _loop()
        events = []
        t = 0
        expected = {}
        for i in range(self.TXNS_PER_ROUND):
            t += int(rng.integers(0, 20_000))
            txn_id = f"t{i}"
            gateway = "GW1" if rng.random() < 0.5 else "GW2"
            explored = bool(rng.random() < 0.5)
            events.append((t, 0, len(events), ("init", txn_id, gateway, explored)))
            feedback = []
            for _ in range(int(rng.integers(0, 3))):
                kind = TxnStatus.SUCCESS if rng.random() < 0.7 else TxnStatus.FAILURE
                delay = int(rng.integers(0, 250_000))
                feedback.append((t + delay, kind))
                events.append((t + delay, 1, len(events), ("feedback", txn_id, kind)))
            expected[txn_id] = (t, explored, sorted(feedback, key=lambda f: f[0]))
            if rng.random() < 0.3:
                tick = t + int(rng.integers(0, 250_000))
                events.append((tick, 2, len(events), ("tick",)))

        events.sort()
        for at, _, _, action in events:
            if action[0] == "init":
                _initiate(loop, action[1], action[3], at, action[2])
            elif action[0] == "feedback":
                loop.submit_feedback(FeedbackEvent(action[1], action[2], at))
            else:
                loop.apply_timeouts(at)
        end = max(e[0] for e in events) + 200_000
        loop.apply_timeouts(end)
        return loop, expected, end

    def test_exactly_once_and_replay(self):
        rng = np.random.default_rng(2024)
        for round_no in range(self.ROUNDS):
            loop, expected, end = self._run_round(rng)
            self.assertEqual(loop.pending_count, 0)

            per_txn = defaultdict(Counter)
            for row in loop.replay_log.rows:
                per_txn[row["txn_id"]][row["event_type"]] += 1

            feedback_total = 0
            for txn_id, (t0, explored, feedback) in expected.items():
                events = per_txn[txn_id]
                feedback_total += len(feedback)
                self.assertEqual(events["HEALTH_PENALIZE"], 1)
                self.assertLessEqual(events["HEALTH_REWARD"], 1)
                sr_records = events["SR_SUCCESS"] + events["SR_FAILURE"]
                self.assertEqual(sr_records, 1 if explored else 0, msg=f"round {round_no} {txn_id}")

                first = feedback[0] if feedback else None
                on_time_success = first is not None and first[1] == TxnStatus.SUCCESS
                self.assertEqual(events["SR_SUCCESS"],
                                 1 if explored and on_time_success and first[0] - t0 <= 90_000 else 0)
                self.assertEqual(events["HEALTH_REWARD"],
                                 1 if on_time_success and first[0] - t0 <= 180_000 else 0)

            c = loop.counters
            resolved = (c.applied_success + c.applied_failure + c.late_success + c.late_failure
                        + c.unknown_feedback)
            self.assertEqual(resolved, feedback_total)
            self.assertEqual(c.initiated, self.TXNS_PER_ROUND)

            rebuilt = rebuild_store(loop.replay_log.to_frame(), {"dyn": (EXPLORATION, DOWNTIME)}, min_samples=1)
            self.assertEqual(rebuilt.state_rows(end), loop.store.state_rows(end))


if __name__ == '__main__':
    unittest.main()
