"""
Exploration Optimizer

Chooses the per-gateway exploration factor e (and with it the window size
n = e * horizon * tps) maximizing V(e), the expected share of traffic that
lands on the truly best gateway:

    V(e) = e + (1 - m*e) * prod_{i<m} P(best gateway outscores gateway i | n(e))

Each factor uses the normal approximation of the difference of two window
success rates. The maximizer is found by golden-section search after a
coarse grid pre-scan.
"""
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from parameter_derivation.normal import std_normal_cdf
from routing_engine.domain import TWO_HOURS_MS, ExplorationParams
from routing_engine.errors import InvalidParameterError

INV_PHI = (math.sqrt(5) - 1) / 2  # 1 / phi
INV_PHI_SQUARE = (3 - math.sqrt(5)) / 2  # 1 / phi^2

DEFAULT_HORIZON_S = 2 * 60 * 60
GRID_POINTS = 200
SEARCH_TOLERANCE = 1e-6
CURVE_COLUMNS = ["e", "window_size", "v"]


@dataclass(frozen=True)
class OptimizerInput:
    """Long-term gateway success rates (fractions), traffic rate and scoring horizon."""

    gateway_means: tuple[float, ...]
    tps: float
    horizon_s: float = DEFAULT_HORIZON_S

    def __post_init__(self):
        means = tuple(sorted(float(mu) for mu in self.gateway_means))
        if len(means) < 2:
            raise InvalidParameterError(f"need at least 2 gateway means, got {len(means)}")
        for mu in means:
            if not 0.0 < mu < 1.0:
                raise InvalidParameterError(f"gateway mean must be in (0, 1), got {mu}")
        if self.tps <= 0:
            raise InvalidParameterError(f"tps must be positive, got {self.tps}")
        if self.horizon_s <= 0:
            raise InvalidParameterError(f"horizon must be positive, got {self.horizon_s}")
        object.__setattr__(self, "gateway_means", means)

    @property
    def m(self) -> int:
        return len(self.gateway_means)

    @property
    def best_mean(self) -> float:
        return self.gateway_means[-1]

    @property
    def degenerate(self) -> bool:
        return all(mu == self.best_mean for mu in self.gateway_means)


@dataclass(frozen=True)
class OptimizerOutput:
    e_star: float
    n_star: int
    v_star: float
    degenerate: bool = False
    multimodal: bool = False


def prob_better(mu_lo: float, mu_hi: float, n: float) -> float:
    """
    P(window rate of the mu_hi gateway > window rate of the mu_lo gateway) over n samples each.

    Normal approximation: P(Z > -(mu_hi - mu_lo) / sigma_D) with
    sigma_D^2 = (mu_lo(1 - mu_lo) + mu_hi(1 - mu_hi)) / n. n may be fractional.
    """
    for mu in (mu_lo, mu_hi):
        if not 0.0 < mu < 1.0:
            raise InvalidParameterError(f"gateway mean must be in (0, 1), got {mu}")
    if n <= 0:
        raise InvalidParameterError(f"sample count must be positive, got {n}")
    if mu_lo == mu_hi:
        return 0.5
    sigma_d = math.sqrt((mu_lo * (1.0 - mu_lo) + mu_hi * (1.0 - mu_hi)) / n)
    return std_normal_cdf((mu_hi - mu_lo) / sigma_d)


def window_size_for(e: float, inp: OptimizerInput) -> float:
    return e * inp.horizon_s * inp.tps


def volume_fraction(e: float, inp: OptimizerInput) -> float:
    if e < 0 or e * inp.m >= 1.0:
        raise InvalidParameterError(f"exploration factor must be in [0, 1/{inp.m}), got {e}")
    n = window_size_for(e, inp)
    if n == 0:
        product = 0.5 ** (inp.m - 1)
    else:
        product = 1.0
        for mu in inp.gateway_means[:-1]:
            product *= prob_better(mu, inp.best_mean, n)
    return e + (1.0 - inp.m * e) * product


def golden_section_max(f: Callable[[float], float], a: float, b: float, tol: float = SEARCH_TOLERANCE) -> float:
    """
    Golden-section search for the maximum of a unimodal f on [a, b].

    Returns the midpoint of the final bracket, whose width is <= tol.
    """
    a, b = min(a, b), max(a, b)
    h = b - a
    if h <= tol:
        return (a + b) / 2

    # Required steps to achieve tolerance
    n = int(math.ceil(math.log(tol / h) / math.log(INV_PHI)))

    c = a + INV_PHI_SQUARE * h
    d = a + INV_PHI * h
    yc = f(c)
    yd = f(d)

    for _ in range(n - 1):
        if yc > yd:
            b = d
            d = c
            yd = yc
            h = INV_PHI * h
            c = a + INV_PHI_SQUARE * h
            yc = f(c)
        else:
            a = c
            c = d
            yc = yd
            h = INV_PHI * h
            d = a + INV_PHI * h
            yd = f(d)

    if yc > yd:
        return (a + d) / 2
    return (c + b) / 2


def _search_bounds(inp: OptimizerInput) -> tuple[float, float]:
    return SEARCH_TOLERANCE, 1.0 / inp.m - SEARCH_TOLERANCE


def _is_unimodal(values: np.ndarray) -> bool:
    signs = np.sign(np.diff(values))
    signs = signs[signs != 0]
    # Rising then falling: at most one sign change, and never falling-then-rising.
    changes = np.flatnonzero(signs[1:] != signs[:-1])
    return len(changes) == 0 or (len(changes) == 1 and signs[0] > 0)


def optimize_exploration(inp: OptimizerInput, grid_points: int = GRID_POINTS,
                         tol: float = SEARCH_TOLERANCE) -> OptimizerOutput:
    lo, hi = _search_bounds(inp)

    def _result(e: float, **flags) -> OptimizerOutput:
        return OptimizerOutput(
            e_star=e,
            n_star=max(1, int(round(window_size_for(e, inp)))),
            v_star=volume_fraction(e, inp),
            **flags,
        )

    if inp.degenerate:
        return _result(lo, degenerate=True)

    grid = np.linspace(lo, hi, grid_points)
    values = np.array([volume_fraction(e, inp) for e in grid])
    best = int(np.argmax(values))

    f = lambda e: volume_fraction(e, inp)
    if _is_unimodal(values):
        return _result(golden_section_max(f, lo, hi, tol))

    left = grid[max(best - 1, 0)]
    right = grid[min(best + 1, grid_points - 1)]
    return _result(golden_section_max(f, left, right, tol), multimodal=True)


def volume_curve(inp: OptimizerInput, points: int = GRID_POINTS) -> pd.DataFrame:
    """(e, window size, V(e)) samples over [0, 1/m) for plotting."""
    grid = np.linspace(0.0, 1.0 / inp.m, points, endpoint=False)
    return pd.DataFrame(
        {
            "e": grid,
            "window_size": [window_size_for(e, inp) for e in grid],
            "v": [volume_fraction(e, inp) for e in grid],
        },
        columns=CURVE_COLUMNS,
    )


def derive_dimension_params(gateway_sr: Sequence[float], tps: float, horizon_s: float = DEFAULT_HORIZON_S,
                            clamp_min: float = 0.05, clamp_max: float = 0.25,
                            max_window_age_ms: int = TWO_HOURS_MS) -> ExplorationParams:
    """
    Exploration parameters for one dimension from its gateways' long-term SR.

    Args:
        gateway_sr: Long-term success rate per gateway, as fractions
        tps: Average transactions per second of the dimension
        horizon_s: Horizon the window should cover
        clamp_min: Smallest exploration factor handed out
        clamp_max: Largest exploration factor handed out
        max_window_age_ms: Recency bound for window entries

    Returns:
        ExplorationParams; a single gateway gets e=0 and a one-entry window
    """
    if len(gateway_sr) < 2:
        return ExplorationParams(0.0, 1, max_window_age_ms=max_window_age_ms, degenerate=True)
    if clamp_min > clamp_max:
        raise InvalidParameterError(f"clamp_min {clamp_min} exceeds clamp_max {clamp_max}")

    inp = OptimizerInput(tuple(gateway_sr), tps, horizon_s)
    result = optimize_exploration(inp)

    e = min(max(result.e_star, clamp_min), clamp_max)
    clamped = e != result.e_star
    # Keep the total exploration budget m*e below 1.
    ceiling = _search_bounds(inp)[1]
    if e > ceiling:
        e, clamped = ceiling, True

    return ExplorationParams(
        exploration_factor=e,
        window_size=max(1, int(round(window_size_for(e, inp)))),
        max_window_age_ms=max_window_age_ms,
        clamped=clamped,
        degenerate=result.degenerate,
    )
