import os
import tempfile
import unittest

import numpy as np
import pandas as pd

from routing_engine.domain import TxnStatus
from routing_engine.errors import InvalidParameterError, OutOfOrderOutcomeError
from routing_engine.sr_window import SlidingWindow, export_windows_csv

S = TxnStatus.SUCCESS
F = TxnStatus.FAILURE


class TestSlidingWindow(unittest.TestCase):

    def test_cold_start_until_min_samples(self):
        w = SlidingWindow(capacity=100, cold_start_score=1.0, min_samples=10)
        for t in range(9):
            w.record_outcome(F, t)
        self.assertEqual(w.score(), 1.0)
        w.record_outcome(F, 9)
        self.assertEqual(w.score(), 0.0)

    def test_small_window_never_stuck_cold(self):
        w = SlidingWindow(capacity=3, min_samples=10)
        for t, status in enumerate([S, F, F]):
            w.record_outcome(status, t)
        self.assertAlmostEqual(w.score(), 1 / 3)

    def test_capacity_evicts_earliest(self):
        w = SlidingWindow(capacity=4, min_samples=1)
        for t, status in enumerate([S, S, F, F, F]):
            w.record_outcome(status, t)
        self.assertEqual(len(w), 4)
        self.assertEqual(w.statuses(), [S, F, F, F])
        self.assertEqual(w.score(), 0.25)

    def test_stale_entries_dropped_on_read(self):
        w = SlidingWindow(capacity=10, max_age_ms=1000, min_samples=1)
        w.record_outcome(S, 0)
        w.record_outcome(F, 500)
        self.assertEqual(w.score(1400), 0.0)
        self.assertEqual(len(w), 1)
        self.assertEqual(w.score(5000), 1.0)  # empty again: cold start

    def test_out_of_order_rejected(self):
        w = SlidingWindow(capacity=10)
        w.record_outcome(S, 100)
        w.record_outcome(S, 100)
        with self.assertRaises(OutOfOrderOutcomeError):
            w.record_outcome(S, 99)

    def test_success_count_matches_recount(self):
        rng = np.random.default_rng(42)
        w = SlidingWindow(capacity=37, max_age_ms=400, min_samples=5)
        t = 0
        for _ in range(5000):
            t += int(rng.integers(0, 30))
            w.record_outcome(S if rng.random() < 0.7 else F, t)
            if rng.random() < 0.1:
                w.evict_stale(t + int(rng.integers(0, 300)))
            self.assertLessEqual(len(w), 37)
            self.assertEqual(w.success_count, sum(1 for s in w.statuses() if s == S))

    def test_bernoulli_score_near_rate(self):
        rng = np.random.default_rng(3)
        w = SlidingWindow(capacity=1000, max_age_ms=10**12, min_samples=10)
        for t in range(6000):
            w.record_outcome(S if rng.random() < 0.8 else F, t)
            if t >= 1000 and t % 500 == 0:
                self.assertAlmostEqual(w.score(t), 0.8, delta=0.06)

    def test_evicted_window_scores_like_fresh_one(self):
        rng = np.random.default_rng(9)
        capacity, max_age = 50, 2_000
        w = SlidingWindow(capacity=capacity, max_age_ms=max_age, min_samples=5)
        history = []
        t = 0
        for _ in range(3000):
            t += int(rng.integers(0, 80))
            status = S if rng.random() < 0.6 else F
            w.record_outcome(status, t)
            history.append((t, status))
            if rng.random() < 0.05:
                now = t + int(rng.integers(0, 3 * max_age))
                w.evict_stale(now)
                fresh = SlidingWindow(capacity=capacity, max_age_ms=max_age, min_samples=5)
                for ts, st in history[-capacity:]:
                    if ts >= now - max_age:
                        fresh.record_outcome(st, ts)
                self.assertEqual(w.statuses(), fresh.statuses())
                self.assertEqual(w.score(now), fresh.score(now))
                # Later records must not precede what the window has seen.
                t = max(t, now)

    def test_invalid_construction(self):
        with self.assertRaises(InvalidParameterError):
            SlidingWindow(capacity=0)
        with self.assertRaises(InvalidParameterError):
            SlidingWindow(capacity=5, cold_start_score=1.5)

    def test_export_windows_csv(self):
        w = SlidingWindow(capacity=5)
        w.record_outcome(S, 1)
        w.record_outcome(F, 2)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "windows.csv")
            n = export_windows_csv({("dyn", "", "GW1"): w}, path)
            df = pd.read_csv(path, keep_default_na=False)
        self.assertEqual(n, 2)
        self.assertEqual(list(df["status"]), ["SUCCESS", "FAILURE"])


if __name__ == '__main__':
    unittest.main()
