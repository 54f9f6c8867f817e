import json
import os
from dataclasses import asdict

import pandas as pd

from routing_engine import __version__
from routing_engine.config import RoutingConfig
from routing_engine.domain import DowntimeParams, ExplorationParams, TransactionOutcome
from routing_engine.experiments import ARM_REPORT_COLUMNS, GATEWAY_REPORT_COLUMNS, ExperimentPlan
from routing_engine.sr_window import export_windows_csv
from simulation.scenario import Scenario

FLOAT_FORMAT = "%.6f"


class RunWriter:
    """
    Writes one run's reports under an output directory with fixed file names
    and column sets. Floats are printed with 6 decimals so identical runs
    produce byte-identical files.
    """

    METRICS_COLUMNS = ARM_REPORT_COLUMNS + [
        "strategy",
        "sr",
        "success_count",
        "failure_count",
        "timeout_count",
        "not_initiated",
        "explored_count",
        "best_gateway_share",
        "ranking_accuracy",
        "ranking_accuracy_cv",
        "late_success",
        "late_failure",
        "unknown_feedback",
        "default_penalize",
        "feedback_timed_out",
        "long_downtimes",
        "stagnant_scores",
    ]

    GATEWAY_COLUMNS = GATEWAY_REPORT_COLUMNS + [
        "sr",
        "success_count",
        "failure_count",
        "timeout_count",
        "explored_count",
    ]

    TIMESERIES_COLUMNS = ["bucket_start_s", "arm", "txn_count", "sr"]

    DOWNTIME_COLUMNS = [
        "arm",
        "gateway",
        "detected_at_ms",
        "recovered_at_ms",
        "recovered_by",
        "duration_s",
        "rerouted_count",
        "long_downtime",
    ]

    ALERT_COLUMNS = ["kind", "arm", "gateway", "started_at_ms", "ended_at_ms", "duration_s"]

    OUTCOME_COLUMNS = ["arm"] + list(TransactionOutcome.COLUMNS)

    STATE_COLUMNS = [
        "config",
        "dimension",
        "gateway",
        "window_entries",
        "window_successes",
        "sr_score",
        "health_value",
        "health_state",
    ]

    METRICS_FILE = "metrics.csv"
    GATEWAYS_FILE = "gateways.csv"
    TIMESERIES_FILE = "timeseries.csv"
    DOWNTIME_FILE = "downtime_events.csv"
    STATE_FILE = "final_state.csv"
    ALERTS_FILE = "alerts.csv"
    WINDOWS_FILE = "windows.csv"
    OUTCOMES_FILE = "outcomes.csv"
    REPLAY_FILE = "replay_log.csv"
    MANIFEST_FILE = "manifest.json"

    @staticmethod
    def write_table(rows, columns, csv_path):
        df = pd.DataFrame(rows, columns=columns)
        df.to_csv(csv_path, index=False, float_format=FLOAT_FORMAT, encoding="utf-8")
        print(f"[✓] Wrote {len(df)} rows to {csv_path}")

    @staticmethod
    def write_frame(df: pd.DataFrame, csv_path):
        df.to_csv(csv_path, index=False, float_format=FLOAT_FORMAT, encoding="utf-8")
        print(f"[✓] Wrote {len(df)} rows to {csv_path}")

    @classmethod
    def write_run(cls, metrics, scenario: Scenario, out_dir: str, routing_config: RoutingConfig | None = None):
        """
        Write all reports of one run.

        Args:
            metrics: RunMetrics from simulation.simulator
            scenario: The scenario that produced it
            out_dir: Output directory (created if missing)
            routing_config: Engine config used for the run
        """
        os.makedirs(out_dir, exist_ok=True)
        cls.write_table(metrics.arms, cls.METRICS_COLUMNS, os.path.join(out_dir, cls.METRICS_FILE))
        cls.write_table(metrics.gateways, cls.GATEWAY_COLUMNS, os.path.join(out_dir, cls.GATEWAYS_FILE))
        cls.write_table(metrics.timeseries, cls.TIMESERIES_COLUMNS, os.path.join(out_dir, cls.TIMESERIES_FILE))
        cls.write_table(metrics.downtime_events, cls.DOWNTIME_COLUMNS, os.path.join(out_dir, cls.DOWNTIME_FILE))
        cls.write_table(metrics.final_state, cls.STATE_COLUMNS, os.path.join(out_dir, cls.STATE_FILE))
        cls.write_table(metrics.alerts, cls.ALERT_COLUMNS, os.path.join(out_dir, cls.ALERTS_FILE))
        export_windows_csv(metrics.windows, os.path.join(out_dir, cls.WINDOWS_FILE))
        if metrics.trace is not None:
            outcomes = [{"arm": arm, **outcome.to_row()} for arm, outcome in metrics.trace]
            cls.write_table(outcomes, cls.OUTCOME_COLUMNS, os.path.join(out_dir, cls.OUTCOMES_FILE))
        if metrics.replay_log is not None:
            metrics.replay_log.write_csv(os.path.join(out_dir, cls.REPLAY_FILE))
        cls.write_manifest(metrics, scenario, out_dir, routing_config)

    @classmethod
    def write_manifest(cls, metrics, scenario: Scenario, out_dir: str, routing_config: RoutingConfig | None = None):
        cfg = routing_config or RoutingConfig()
        manifest = {
            "artifact_version": __version__,
            "schema_version": scenario.schema_version,
            "scenario": scenario.name,
            "seed": scenario.seed,
            "end_time_ms": metrics.end_time_ms,
            "arms": plan_to_manifest(scenario.plan),
            "window": {"cold_start_score": cfg.cold_start_score, "min_samples": cfg.min_samples},
            "downtime_case": metrics.downtime_case,
        }
        path = os.path.join(out_dir, cls.MANIFEST_FILE)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")
        print(f"[✓] Wrote {path}")


def plan_to_manifest(plan: ExperimentPlan) -> list[dict]:
    return [
        {
            "id": arm.configuration,
            "strategy": arm.strategy.value,
            "priority": list(arm.priority),
            "exploration": asdict(arm.exploration),
            "downtime": asdict(arm.downtime) if arm.downtime is not None else None,
        }
        for arm in plan.arms
    ]


def read_manifest(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def arm_params_from_manifest(manifest: dict) -> dict:
    """configuration -> (ExplorationParams, DowntimeParams | None) as recorded by write_manifest."""
    arms = {}
    for arm in manifest.get("arms", []):
        downtime = arm.get("downtime")
        arms[arm["id"]] = (
            ExplorationParams(**arm["exploration"]),
            DowntimeParams(**downtime) if downtime else None,
        )
    return arms
