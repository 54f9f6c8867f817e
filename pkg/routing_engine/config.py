"""
Engine configuration.

Defaults live in routing_config.json at the repository root. Every key is
optional: a missing file or a missing key falls back to the values below.
"""
import json
import os
from dataclasses import dataclass, field

DEFAULT_CONFIG_PATH = "routing_config.json"

DEFAULT_DIMENSION_SCHEMA = ("MERCHANT_ID", "PLATFORM", "PAYMENT_INSTRUMENT", "NETWORK")


@dataclass(frozen=True)
class RoutingConfig:
    dimension_schema: tuple[str, ...] = DEFAULT_DIMENSION_SCHEMA
    cold_start_score: float = 1.0
    min_samples: int = 10
    max_window_age_hours: float = 2.0
    success_timeout_s: float = 180.0
    failure_timeout_s: float = 90.0
    clamp_min: float = 0.05
    clamp_max: float = 0.25
    horizon_hours: float = 2.0
    revival_interval_s: float = 300.0
    default_sr2_gap: float = 30.0
    sr2_floor: float = 5.0
    sigma_factor: float = 3.0
    use_exact_root: bool = False
    latency_cap_s: float = 300.0
    tick_ms: int = 1000
    timeseries_bucket_s: float = 3600.0
    source_path: str | None = field(default=None, compare=False)

    @property
    def max_window_age_ms(self) -> int:
        return int(round(self.max_window_age_hours * 3600 * 1000))

    @property
    def revival_interval_ms(self) -> int:
        return int(round(self.revival_interval_s * 1000))


def _section(config: dict, name: str) -> dict:
    value = config.get(name, {})
    return value if isinstance(value, dict) else {}


def load_routing_config(path: str | None = DEFAULT_CONFIG_PATH) -> RoutingConfig:
    """
    Read routing_config.json, filling anything missing from RoutingConfig defaults.

    Both the nested layout ({"sr_window": {"min_samples": 10}}) and a flat
    layout ({"min_samples": 10}) are accepted; nested wins.
    """
    if path is None or not os.path.exists(path):
        return RoutingConfig()

    with open(path, "r", encoding="utf-8") as f:
        config = json.load(f)

    defaults = RoutingConfig()
    window = _section(config, "sr_window")
    feedback = _section(config, "feedback")
    exploration = _section(config, "exploration")
    downtime = _section(config, "downtime")
    simulation = _section(config, "simulation")

    def pick(section: dict, key: str, default):
        return section.get(key, config.get(key, default))

    schema = config.get("dimension_schema", list(defaults.dimension_schema))
    return RoutingConfig(
        dimension_schema=tuple(str(f) for f in schema),
        cold_start_score=float(pick(window, "cold_start_score", defaults.cold_start_score)),
        min_samples=int(pick(window, "min_samples", defaults.min_samples)),
        max_window_age_hours=float(pick(window, "max_window_age_hours", defaults.max_window_age_hours)),
        success_timeout_s=float(pick(feedback, "success_timeout_s", defaults.success_timeout_s)),
        failure_timeout_s=float(pick(feedback, "failure_timeout_s", defaults.failure_timeout_s)),
        clamp_min=float(pick(exploration, "clamp_min", defaults.clamp_min)),
        clamp_max=float(pick(exploration, "clamp_max", defaults.clamp_max)),
        horizon_hours=float(pick(exploration, "horizon_hours", defaults.horizon_hours)),
        revival_interval_s=float(pick(downtime, "revival_interval_s", defaults.revival_interval_s)),
        default_sr2_gap=float(pick(downtime, "default_sr2_gap", defaults.default_sr2_gap)),
        sr2_floor=float(pick(downtime, "sr2_floor", defaults.sr2_floor)),
        sigma_factor=float(pick(downtime, "sigma_factor", defaults.sigma_factor)),
        use_exact_root=bool(pick(downtime, "use_exact_root", defaults.use_exact_root)),
        latency_cap_s=float(pick(simulation, "latency_cap_s", defaults.latency_cap_s)),
        tick_ms=int(pick(simulation, "tick_ms", defaults.tick_ms)),
        timeseries_bucket_s=float(pick(simulation, "timeseries_bucket_s", defaults.timeseries_bucket_s)),
        source_path=path,
    )
