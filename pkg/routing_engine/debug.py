"""
Environment switches for runs: ROUTEPILOT_DEBUG turns on per-transaction
diagnostics and ROUTEPILOT_SEED overrides scenario seeds.

Sweep worker processes import this too, so it only depends on os.
"""

import os

DEBUG_ENV = "ROUTEPILOT_DEBUG"
SEED_ENV = "ROUTEPILOT_SEED"
_ON_VALUES = frozenset({"1", "true", "yes", "y", "on"})


def _env(name: str) -> str:
    return (os.environ.get(name) or "").strip()


def _env_flag(name: str) -> bool:
    return _env(name).lower() in _ON_VALUES


def is_debug_enabled(explicit: bool | None = None) -> bool:
    """A --debug flag from the command line wins; otherwise ROUTEPILOT_DEBUG decides."""
    return bool(explicit) if explicit is not None else _env_flag(DEBUG_ENV)


def dprint(enabled: bool, msg: str) -> None:
    """Print one diagnostic line ([SIM], [FEEDBACK], [DOWNTIME]) when debugging is on."""
    if not enabled:
        return
    print(msg, flush=True)


def default_seed(fallback: int | None) -> int | None:
    """Seed from ROUTEPILOT_SEED when set, else `fallback`."""
    raw = _env(SEED_ENV)
    if not raw:
        return fallback
    try:
        return int(raw)
    except ValueError:
        print(f"[WARN] Ignoring non-integer {SEED_ENV}={raw!r}")
        return fallback
