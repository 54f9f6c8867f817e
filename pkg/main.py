import argparse
import os
import sys

import numpy as np
import pandas as pd

from parameter_derivation.downtime_derivation import default_sr2, derive_downtime, derive_sigma_factor
from parameter_derivation.explore_optimizer import OptimizerInput, optimize_exploration, volume_curve
from routing_engine.config import DEFAULT_CONFIG_PATH, load_routing_config
from routing_engine.debug import default_seed, is_debug_enabled
from routing_engine.errors import RoutePilotError
from routing_engine.replay import read_replay_log, rebuild_store
from simulation.scenario import load_scenario
from simulation.simulator import run, run_downtime_case
from simulation.sweep import empirical_argmax, smoothed_argmax, sweep
from simulation.writer import FLOAT_FORMAT, RunWriter, arm_params_from_manifest, read_manifest


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _grid(text: str) -> list[float]:
    """start:stop:count, inclusive of both ends."""
    try:
        start, stop, count = text.split(":")
        return [float(v) for v in np.linspace(float(start), float(stop), int(count))]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:count, got {text!r}") from None


def _labeled(rows):
    print("field,value")
    for label, value in rows:
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = f"{value:.6f}"
        print(f"{label},{value}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="routepilot: closed-loop payment routing derivations and simulator")
    parser.add_argument("--config", default=DEFAULT_CONFIG_PATH, help="Path to the engine configuration file")
    parser.add_argument("--debug", action="store_true", default=None,
                        help="Print verbose routing/feedback diagnostics (or set ROUTEPILOT_DEBUG=1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="Optimal exploration factor and window size")
    p.add_argument("--mu", type=_float_list, required=True, help="Comma-separated long-term gateway SRs (fractions)")
    p.add_argument("--tps", type=float, default=1.0, help="Average transactions per second")
    p.add_argument("--horizon-hours", type=float, default=None, help="Window horizon (default from config)")
    p.add_argument("--curve-csv", default=None, help="Optional CSV of (e, window_size, V(e)) samples")

    p = sub.add_parser("derive-downtime", help="Reward factor, threshold and detection count for one dimension")
    p.add_argument("--sr1", type=float, required=True, help="Average SR of the dimension (percent)")
    p.add_argument("--sr2", type=float, default=None, help="SR treated as down (percent, default sr1 - 30)")
    sigma = p.add_mutually_exclusive_group()
    sigma.add_argument("--sigma", type=float, default=None, help="Sigma factor (default from config)")
    sigma.add_argument("--allowed-false-per-day", type=float, default=None,
                       help="Derive the sigma factor from tps and an allowed false-DOWN count per day")
    p.add_argument("--tps", type=float, required=True, help="Average transactions per second")
    p.add_argument("--latency-s", type=float, required=True, help="Average feedback latency in seconds")
    p.add_argument("--exact-root", action="store_true", default=None,
                   help="Use the exact decay root instead of the rounded 0.29/0.71 threshold weights")

    p = sub.add_parser("simulate", help="Run one scenario")
    p.add_argument("--scenario", required=True, help="Scenario JSON file")
    p.add_argument("--seed", type=int, default=None, help="Override the scenario seed (default ROUTEPILOT_SEED)")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--downtime-case", action="store_true", help="Measure detection of the scenario's single SR drop")
    p.add_argument("--outcomes", action="store_true", help="Also write every initiated transaction to outcomes.csv")

    p = sub.add_parser("sweep", help="Run a scenario over a grid of e or sigma")
    p.add_argument("--scenario", required=True, help="Scenario JSON template")
    p.add_argument("--param", choices=["e", "sigma"], required=True, help="Swept parameter")
    grid = p.add_mutually_exclusive_group(required=True)
    grid.add_argument("--values", type=_float_list, help="Comma-separated grid values")
    grid.add_argument("--grid", type=_grid, help="start:stop:count")
    p.add_argument("--seed", type=int, default=None, help="Override the scenario seed (default ROUTEPILOT_SEED)")
    p.add_argument("--jobs", type=int, default=1, help="Grid points run in parallel")
    p.add_argument("--replicas", type=int, default=1, help="Seeds per grid point; metrics are averaged over them")
    p.add_argument("--out", required=True, help="Output CSV path")

    p = sub.add_parser("replay", help="Rebuild scores from a replay log and print the final state")
    p.add_argument("--log", required=True, help="replay_log.csv written by simulate")
    p.add_argument("--manifest", default=None, help="manifest.json of the run (default: next to the log)")
    return parser


def cmd_optimize(args, cfg) -> int:
    if len(args.mu) < 2:
        raise argparse.ArgumentTypeError("--mu needs at least 2 values")
    horizon_hours = cfg.horizon_hours if args.horizon_hours is None else args.horizon_hours
    inp = OptimizerInput(tuple(args.mu), args.tps, horizon_hours * 3600)
    result = optimize_exploration(inp)
    if result.degenerate:
        print("[WARN] Degenerate input: all gateway means are equal, no gateway is better to exploit")
    if result.multimodal:
        print("[WARN] V(e) is not unimodal on the grid; refined around the grid maximum")
    _labeled([
        ("e_star", result.e_star),
        ("n_star", result.n_star),
        ("v_star", result.v_star),
        ("degenerate", result.degenerate),
    ])
    if args.curve_csv:
        RunWriter.write_frame(volume_curve(inp), args.curve_csv)
    return 0


def cmd_derive_downtime(args, cfg) -> int:
    sr2 = default_sr2(args.sr1, cfg.default_sr2_gap, cfg.sr2_floor) if args.sr2 is None else args.sr2
    if args.allowed_false_per_day is not None:
        sigma = derive_sigma_factor(args.tps, args.allowed_false_per_day)
    else:
        sigma = cfg.sigma_factor if args.sigma is None else args.sigma
    exact_root = cfg.use_exact_root if args.exact_root is None else args.exact_root

    d = derive_downtime(args.sr1, sr2, sigma, args.tps, args.latency_s, exact_root=exact_root)
    rows = [
        ("sr1", d.sr1),
        ("sr2", d.sr2),
        ("sigma", d.sigma_factor),
        ("a", d.reward_factor),
        ("threshold", d.threshold),
        ("k", d.k),
        ("t_c", d.t_c),
        ("latency_guard", d.latency_ok),
    ]
    if d.adjusted_reward_factor is not None:
        rows.append(("adjusted_a", d.adjusted_reward_factor))
    _labeled(rows)
    return 0


def _seed(args):
    return args.seed if args.seed is not None else default_seed(None)


def cmd_simulate(args, cfg) -> int:
    scenario = load_scenario(args.scenario, cfg, seed=_seed(args))
    print(f"[INFO] Scenario {scenario.name}: {len(scenario.gateways)} gateways, {len(scenario.plan.arms)} arms, "
          f"seed {scenario.seed}")
    if args.downtime_case:
        metrics = run_downtime_case(scenario, cfg, record_replay=True, debug=args.debug)
        if not args.outcomes:
            metrics.trace = None
    else:
        metrics = run(scenario, cfg, record_replay=True, debug=args.debug, trace=args.outcomes)
    RunWriter.write_run(metrics, scenario, args.out, cfg)

    for row in metrics.arms:
        print(f"[RESULT] arm={row['arm']} strategy={row['strategy']} txns={row['txn_count']} sr={row['sr']:.6f} "
              f"best_share={row['best_gateway_share']:.6f}")
    if metrics.downtime_case is not None:
        for arm, case in metrics.downtime_case["arms"].items():
            print(f"[RESULT] arm={arm} detection_txns={case['detection_txns']} "
                  f"detection_seconds={case['detection_seconds']} rerouted={case['rerouted_count']}")
    return 0


def cmd_sweep(args, cfg) -> int:
    scenario = load_scenario(args.scenario, cfg, seed=_seed(args))
    values = args.values if args.values is not None else args.grid
    if args.jobs < 1:
        raise argparse.ArgumentTypeError("--jobs must be >= 1")
    if args.replicas < 1:
        raise argparse.ArgumentTypeError("--replicas must be >= 1")
    df = sweep(scenario, args.param, values, cfg, jobs=args.jobs, replicas=args.replicas)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    RunWriter.write_frame(df, args.out)
    if df["best_gateway_share"].notna().any():
        print(f"[RESULT] empirical argmax of best_gateway_share: {args.param}={empirical_argmax(df):.6f}")
    if df["best_gateway_share_cv"].notna().sum() >= 3:
        print(f"[RESULT] smoothed argmax of best_gateway_share_cv: "
              f"{args.param}={smoothed_argmax(df, 'best_gateway_share_cv'):.6f}")
    return 0


def cmd_replay(args, cfg) -> int:
    manifest_path = args.manifest or os.path.join(os.path.dirname(os.path.abspath(args.log)), RunWriter.MANIFEST_FILE)
    if not os.path.exists(args.log):
        raise RoutePilotError(f"replay log not found: {args.log}")
    if not os.path.exists(manifest_path):
        raise RoutePilotError(f"manifest not found: {manifest_path}")

    manifest = read_manifest(manifest_path)
    window = manifest.get("window", {})
    store = rebuild_store(
        read_replay_log(args.log),
        arm_params_from_manifest(manifest),
        cold_start_score=float(window.get("cold_start_score", cfg.cold_start_score)),
        min_samples=int(window.get("min_samples", cfg.min_samples)),
    )
    state = pd.DataFrame(store.state_rows(manifest.get("end_time_ms")), columns=RunWriter.STATE_COLUMNS)
    rendered = state.to_csv(index=False, float_format=FLOAT_FORMAT)
    sys.stdout.write(rendered)

    expected_path = os.path.join(os.path.dirname(manifest_path), RunWriter.STATE_FILE)
    if os.path.exists(expected_path):
        with open(expected_path, "r", encoding="utf-8") as f:
            expected = f.read()
        if expected != rendered:
            print(f"[ERROR] Replayed state differs from {expected_path}", file=sys.stderr)
            return 1
        print(f"[✓] Replayed state matches {expected_path}")
    return 0


COMMANDS = {
    "optimize": cmd_optimize,
    "derive-downtime": cmd_derive_downtime,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "replay": cmd_replay,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.debug = is_debug_enabled(args.debug)
    cfg = load_routing_config(args.config)
    try:
        return COMMANDS[args.command](args, cfg)
    except argparse.ArgumentTypeError as e:
        parser.print_usage(sys.stderr)
        print(f"[ERROR] {e}", file=sys.stderr)
        return 2
    except RoutePilotError as e:
        parser.print_usage(sys.stderr)
        print(f"[ERROR] {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
