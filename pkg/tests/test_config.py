import io
import json
import os
import tempfile
import unittest
from contextlib import redirect_stdout
from unittest.mock import patch

from routing_engine.config import RoutingConfig, load_routing_config
from routing_engine.debug import default_seed, dprint, is_debug_enabled


class TestRoutingConfig(unittest.TestCase):

    def test_missing_file_gives_defaults(self):
        cfg = load_routing_config("/nonexistent/routing_config.json")
        self.assertEqual(cfg, RoutingConfig())
        self.assertEqual(cfg.max_window_age_ms, 7_200_000)
        self.assertEqual(cfg.revival_interval_ms, 300_000)

    def test_nested_wins_over_flat(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "cfg.json")
            with open(path, "w", encoding="utf-8") as f:
                json.dump({"min_samples": 3, "sr_window": {"min_samples": 7}, "sigma_factor": 4.5}, f)
            cfg = load_routing_config(path)
        self.assertEqual(cfg.min_samples, 7)
        self.assertEqual(cfg.sigma_factor, 4.5)
        self.assertEqual(cfg.cold_start_score, 1.0)
        self.assertEqual(cfg.source_path, path)

    def test_repository_config_matches_defaults(self):
        root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
        self.assertEqual(load_routing_config(os.path.join(root, "routing_config.json")), RoutingConfig())


class TestDebugHelpers(unittest.TestCase):

    @patch.dict(os.environ, {"ROUTEPILOT_DEBUG": "yes"})
    def test_debug_from_env(self):
        self.assertTrue(is_debug_enabled())
        self.assertFalse(is_debug_enabled(False))

    @patch.dict(os.environ, {"ROUTEPILOT_DEBUG": " Off "})
    def test_debug_off_values(self):
        self.assertFalse(is_debug_enabled())
        self.assertTrue(is_debug_enabled(True))

    def test_dprint_only_when_enabled(self):
        out = io.StringIO()
        with redirect_stdout(out):
            dprint(False, "[SIM] hidden")
            dprint(True, "[SIM] shown")
        self.assertEqual(out.getvalue(), "[SIM] shown\n")

    @patch.dict(os.environ, {"ROUTEPILOT_SEED": "17"})
    def test_seed_from_env(self):
        self.assertEqual(default_seed(3), 17)

    @patch.dict(os.environ, {"ROUTEPILOT_SEED": "abc"})
    def test_bad_seed_ignored(self):
        self.assertEqual(default_seed(3), 3)

    @patch.dict(os.environ, {}, clear=True)
    def test_seed_fallback(self):
        self.assertIsNone(default_seed(None))


if __name__ == '__main__':
    unittest.main()
