import io
import json
import os
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout

import pandas as pd

from main import main

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG = os.path.join(ROOT, "routing_config.json")

TINY = {
    "schema_version": "1.0",
    "name": "cli_tiny",
    "seed": 9,
    "tps": 1.0,
    "horizon_s": 600,
    "gateways": [{"id": "GW1", "regimes": [[0, 90], [300, 60]]}, {"id": "GW2", "regimes": [[0, 80]]}],
    "arms": [
        {"id": "dynamic", "strategy": "dynamic", "exploration": {"exploration_factor": 0.1, "window_size": 30},
         "downtime": {"derive": True, "sr1": 90, "sr2": 60, "sigma": 3}},
        {"id": "random", "strategy": "random"},
    ],
}


def _run(*argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(["--config", CONFIG, *argv])
    return code, out.getvalue(), err.getvalue()


def _fields(output):
    rows = {}
    for line in output.splitlines():
        if "," in line and not line.startswith("["):
            key, value = line.split(",", 1)
            rows[key] = value
    return rows


class TestOptimizeCommand(unittest.TestCase):

    def test_two_close_gateways(self):
        code, out, _ = _run("optimize", "--mu", "0.8,0.81")
        self.assertEqual(code, 0)
        rows = _fields(out)
        self.assertAlmostEqual(float(rows["e_star"]), 0.1535, delta=0.003)
        self.assertAlmostEqual(float(rows["n_star"]), 1105, delta=15)
        self.assertEqual(rows["degenerate"], "false")

    def test_degenerate_input_still_succeeds(self):
        code, out, _ = _run("optimize", "--mu", "0.8,0.8")
        self.assertEqual(code, 0)
        self.assertIn("[WARN]", out)
        self.assertEqual(_fields(out)["degenerate"], "true")

    def test_single_gateway_is_an_error(self):
        code, _, err = _run("optimize", "--mu", "0.8")
        self.assertEqual(code, 2)
        self.assertIn("[ERROR]", err)

    def test_curve_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "curve.csv")
            code, _, _ = _run("optimize", "--mu", "0.8,0.81", "--curve-csv", path)
            self.assertEqual(code, 0)
            curve = pd.read_csv(path)
        self.assertGreater(len(curve), 10)


class TestDeriveDowntimeCommand(unittest.TestCase):

    def test_closed_forms(self):
        code, out, _ = _run("derive-downtime", "--sr1", "90", "--sr2", "60", "--sigma", "3",
                            "--tps", "1", "--latency-s", "0.2")
        self.assertEqual(code, 0)
        rows = _fields(out)
        self.assertAlmostEqual(float(rows["a"]), 1 / 9, places=5)
        self.assertAlmostEqual(float(rows["threshold"]), 0.687, places=5)
        self.assertEqual(rows["latency_guard"], "true")
        self.assertNotIn("adjusted_a", rows)

    def test_latency_guard_adjustment(self):
        code, out, _ = _run("derive-downtime", "--sr1", "90", "--sr2", "60", "--sigma", "3",
                            "--tps", "10", "--latency-s", "5")
        self.assertEqual(code, 0)
        rows = _fields(out)
        self.assertEqual(rows["latency_guard"], "false")
        self.assertAlmostEqual(float(rows["adjusted_a"]), 0.00539, delta=1e-5)

    def test_sigma_from_allowed_false_downtimes(self):
        code, out, _ = _run("derive-downtime", "--sr1", "90", "--allowed-false-per-day", "1",
                            "--tps", "1", "--latency-s", "1")
        self.assertEqual(code, 0)
        rows = _fields(out)
        self.assertAlmostEqual(float(rows["sigma"]), 4.30, delta=0.05)
        self.assertAlmostEqual(float(rows["sr2"]), 60.0)

    def test_inverted_rates_are_rejected(self):
        code, _, err = _run("derive-downtime", "--sr1", "60", "--sr2", "90", "--sigma", "3",
                            "--tps", "1", "--latency-s", "1")
        self.assertEqual(code, 2)
        self.assertIn("[ERROR]", err)

    def test_sigma_options_are_exclusive(self):
        with redirect_stderr(io.StringIO()), self.assertRaises(SystemExit) as ctx:
            main(["derive-downtime", "--sr1", "90", "--sigma", "3", "--allowed-false-per-day", "1",
                  "--tps", "1", "--latency-s", "1"])
        self.assertEqual(ctx.exception.code, 2)


class TestSimulateAndReplay(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.scenario = os.path.join(self.tmp.name, "tiny.json")
        with open(self.scenario, "w", encoding="utf-8") as f:
            json.dump(TINY, f)
        self.out = os.path.join(self.tmp.name, "run")

    def tearDown(self):
        self.tmp.cleanup()

    def test_simulate_then_replay_matches(self):
        code, out, _ = _run("simulate", "--scenario", self.scenario, "--out", self.out)
        self.assertEqual(code, 0)
        self.assertIn("[RESULT] arm=dynamic", out)

        code, out, _ = _run("replay", "--log", os.path.join(self.out, "replay_log.csv"))
        self.assertEqual(code, 0)
        self.assertIn("[✓] Replayed state matches", out)
        self.assertTrue(out.startswith("config,dimension,gateway"))

    def test_replay_detects_tampered_state(self):
        _run("simulate", "--scenario", self.scenario, "--out", self.out)
        state_path = os.path.join(self.out, "final_state.csv")
        with open(state_path, "a", encoding="utf-8") as f:
            f.write("extra,row,GW9,0,0,1.000000,1.000000,UP\n")
        code, _, err = _run("replay", "--log", os.path.join(self.out, "replay_log.csv"))
        self.assertEqual(code, 1)
        self.assertIn("[ERROR]", err)

    def test_seed_override(self):
        _run("simulate", "--scenario", self.scenario, "--out", self.out, "--seed", "123")
        with open(os.path.join(self.out, "manifest.json"), "r", encoding="utf-8") as f:
            self.assertEqual(json.load(f)["seed"], 123)

    def test_downtime_case(self):
        code, out, _ = _run("simulate", "--scenario", self.scenario, "--out", self.out, "--downtime-case")
        self.assertEqual(code, 0)
        self.assertIn("detection_txns=", out)

    def test_outcomes_and_windows_written(self):
        code, _, _ = _run("simulate", "--scenario", self.scenario, "--out", self.out, "--outcomes")
        self.assertEqual(code, 0)
        outcomes = pd.read_csv(os.path.join(self.out, "outcomes.csv"))
        self.assertEqual(list(outcomes.columns),
                         ["arm", "txn_id", "gateway", "status", "initiated_at", "resolved_at", "explored"])
        self.assertTrue((outcomes["resolved_at"] >= outcomes["initiated_at"]).all())
        windows = pd.read_csv(os.path.join(self.out, "windows.csv"))
        self.assertEqual(set(windows["config"]), {"dynamic"})
        state = pd.read_csv(os.path.join(self.out, "final_state.csv"))
        self.assertEqual(len(windows), state["window_entries"].sum())
        self.assertTrue(os.path.exists(os.path.join(self.out, "alerts.csv")))

    def test_outcomes_are_opt_in(self):
        _run("simulate", "--scenario", self.scenario, "--out", self.out, "--downtime-case")
        self.assertFalse(os.path.exists(os.path.join(self.out, "outcomes.csv")))

    def test_missing_scenario(self):
        code, _, err = _run("simulate", "--scenario", os.path.join(self.tmp.name, "nope.json"), "--out", self.out)
        self.assertEqual(code, 2)
        self.assertIn("file not found", err)

    def test_invalid_scenario_names_field(self):
        bad = dict(TINY, tps=-1)
        with open(self.scenario, "w", encoding="utf-8") as f:
            json.dump(bad, f)
        code, _, err = _run("simulate", "--scenario", self.scenario, "--out", self.out)
        self.assertEqual(code, 2)
        self.assertIn("tps", err)

    def test_wrongly_typed_value_is_reported_not_raised(self):
        bad = json.loads(json.dumps(TINY))
        bad["gateways"][0]["regimes"] = [[0, "high"]]
        with open(self.scenario, "w", encoding="utf-8") as f:
            json.dump(bad, f)
        code, _, err = _run("simulate", "--scenario", self.scenario, "--out", self.out)
        self.assertEqual(code, 2)
        self.assertIn("gateways[0].regimes[0]", err)

    def test_replay_without_manifest(self):
        code, _, err = _run("replay", "--log", os.path.join(self.tmp.name, "missing.csv"))
        self.assertEqual(code, 2)
        self.assertIn("not found", err)


class TestSweepCommand(unittest.TestCase):

    def test_sweep_writes_grid(self):
        with tempfile.TemporaryDirectory() as tmp:
            scenario = os.path.join(tmp, "tiny.json")
            with open(scenario, "w", encoding="utf-8") as f:
                json.dump(TINY, f)
            path = os.path.join(tmp, "out", "sweep.csv")
            code, out, _ = _run("sweep", "--scenario", scenario, "--param", "e", "--grid", "0.05:0.15:3",
                                "--out", path)
            self.assertEqual(code, 0)
            df = pd.read_csv(path)
        self.assertEqual(list(df["value"]), [0.05, 0.1, 0.15])
        self.assertIn("empirical argmax", out)

    def test_sweep_replicas(self):
        with tempfile.TemporaryDirectory() as tmp:
            scenario = os.path.join(tmp, "tiny.json")
            with open(scenario, "w", encoding="utf-8") as f:
                json.dump(TINY, f)
            path = os.path.join(tmp, "sweep.csv")
            code, out, _ = _run("sweep", "--scenario", scenario, "--param", "e", "--grid", "0.05:0.15:3",
                                "--replicas", "2", "--out", path)
            self.assertEqual(code, 0)
            df = pd.read_csv(path)
        self.assertEqual(list(df["replicas"]), [2, 2, 2])
        self.assertIn("[SWEEP] 3 points x 2 seeds", out)
        self.assertIn("smoothed argmax of best_gateway_share_cv", out)

    def test_bad_grid(self):
        with redirect_stderr(io.StringIO()), self.assertRaises(SystemExit):
            main(["sweep", "--scenario", "x.json", "--param", "e", "--grid", "0.1:0.2", "--out", "x.csv"])

    def test_jobs_must_be_positive(self):
        with tempfile.TemporaryDirectory() as tmp:
            scenario = os.path.join(tmp, "tiny.json")
            with open(scenario, "w", encoding="utf-8") as f:
                json.dump(TINY, f)
            code, _, _ = _run("sweep", "--scenario", scenario, "--param", "e", "--values", "0.1",
                              "--jobs", "0", "--out", os.path.join(tmp, "s.csv"))
        self.assertEqual(code, 2)


if __name__ == '__main__':
    unittest.main()
