"""
Downtime Derivation

Closed-form tuning of the health score for one dimension. Inputs are the
dimension's average SR (sr1, percent), the SR below which the gateway should
count as down (sr2, percent) and a sigma factor bounding false alarms.

Per transaction the score follows v <- (1 - a) v + a * success, so under a
stationary SR its mean is sr/100 and its std is sqrt(a/(2-a) * p(1-p)).
After a drop sr1 -> sr2 the mean decays exponentially towards sr2/100; the
reward factor a is the one minimizing the expected number of transactions
t_c until that decay crosses mean - sigma * std.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect
from scipy.signal import lfilter

from parameter_derivation.normal import std_normal_cdf, std_normal_ppf
from routing_engine.domain import DowntimeParams
from routing_engine.errors import DegenerateDerivationError, InvalidParameterError

# Published threshold weights; they embed x ~ 0.71 for the decay root.
THRESHOLD_WEIGHT_SR1 = 0.29
THRESHOLD_WEIGHT_SR2 = 0.71

ROOT_TOLERANCE = 1e-12
SECONDS_PER_DAY = 24 * 60 * 60


@dataclass(frozen=True)
class DowntimeDerivation:
    sr1: float
    sr2: float
    sigma_factor: float
    tps: float
    avg_latency_s: float
    reward_factor: float
    threshold: float
    k: float
    t_c: float
    latency_ok: bool
    adjusted_reward_factor: float | None = None
    exact_root: bool = False

    @property
    def effective_reward_factor(self) -> float:
        return self.reward_factor if self.adjusted_reward_factor is None else self.adjusted_reward_factor

    def to_params(self, revival_interval_ms: int = 5 * 60 * 1000) -> DowntimeParams:
        return DowntimeParams(
            reward_factor=self.effective_reward_factor,
            threshold=self.threshold,
            sigma_factor=self.sigma_factor,
            revival_interval_ms=revival_interval_ms,
        )


def _check_sr(sr: float, name: str = "sr"):
    if not 0.0 < sr < 100.0:
        raise InvalidParameterError(f"{name} must be in (0, 100), got {sr}")


def _check_pair(sr1: float, sr2: float):
    _check_sr(sr1, "sr1")
    _check_sr(sr2, "sr2")
    if not sr2 < sr1:
        raise InvalidParameterError(f"need sr2 < sr1, got sr1={sr1}, sr2={sr2}")


def _check_sigma(sigma: float):
    if sigma <= 0:
        raise InvalidParameterError(f"sigma factor must be positive, got {sigma}")


def stationary_stats(sr: float, a: float) -> tuple[float, float]:
    """(mean, std) of the health score under stationary Bernoulli(sr/100) traffic."""
    _check_sr(sr)
    if not 0.0 < a < 1.0:
        raise InvalidParameterError(f"reward factor must be in (0, 1), got {a}")
    p = sr / 100.0
    return p, math.sqrt(a / (2.0 - a) * p * (1.0 - p))


def decay_root_residual(x: float) -> float:
    return math.log(1.0 - x) * (1.0 - x) / x + 0.5


def solve_decay_root(tol: float = ROOT_TOLERANCE) -> float:
    """Root of ln(1 - x)(1 - x)/x + 1/2 on (0, 1), ~0.715331863."""
    return float(bisect(decay_root_residual, 0.5, 0.9, xtol=tol))


def k_factor(sr1: float, sr2: float, sigma: float) -> float:
    _check_pair(sr1, sr2)
    _check_sigma(sigma)
    return sigma * math.sqrt(sr1 * (100.0 - sr1)) / (sr1 - sr2)


def derive_reward_factor(sr1: float, sr2: float, sigma: float) -> float:
    _check_pair(sr1, sr2)
    _check_sigma(sigma)
    a = (sr1 - sr2) ** 2 / (sigma ** 2 * sr1 * (100.0 - sr1))
    if a >= 1.0:
        raise DegenerateDerivationError(
            f"reward factor {a:.6f} >= 1 for sr1={sr1}, sr2={sr2}, sigma={sigma}; "
            "widen sigma or narrow the SR gap"
        )
    return a


def derive_threshold(sr1: float, sr2: float, exact_root: bool = False) -> float:
    _check_sr(sr1, "sr1")
    _check_sr(sr2, "sr2")
    if sr2 > sr1:
        raise InvalidParameterError(f"need sr2 <= sr1, got sr1={sr1}, sr2={sr2}")
    if exact_root:
        x = solve_decay_root()
        return ((1.0 - x) * sr1 + x * sr2) / 100.0
    return (THRESHOLD_WEIGHT_SR1 * sr1 + THRESHOLD_WEIGHT_SR2 * sr2) / 100.0


def detection_count(sr1: float, sr2: float, sigma: float) -> float:
    """Expected transactions t_c from the drop until the mean score crosses the alarm level."""
    a = derive_reward_factor(sr1, sr2, sigma)
    k = k_factor(sr1, sr2, sigma)
    arg = 1.0 - k * math.sqrt(a / (2.0 - a))
    if arg <= 0.0:
        raise DegenerateDerivationError(
            f"threshold unreachable by mean decay for sr1={sr1}, sr2={sr2}, sigma={sigma}"
        )
    return -math.log(arg) / a


def decay_score(t: float, sr1: float, sr2: float, a: float) -> float:
    """Mean score t transactions after a drop sr1 -> sr2."""
    return (sr1 - sr2) / 100.0 * math.exp(-a * t) + sr2 / 100.0


def check_latency_guard(sr1: float, a: float, tps: float, latency_s: float, threshold: float) -> bool:
    """
    sr1/100 * (1 - a)^N > threshold with N = tps * latency.

    N initiations are penalized before their rewards arrive; a healthy
    gateway must survive that dip without being marked DOWN.
    """
    n = tps * latency_s
    return sr1 / 100.0 * (1.0 - a) ** n > threshold


def adjust_reward_factor_for_latency(sr1: float, a: float, tps: float, latency_s: float, threshold: float) -> float:
    """Largest reward factor <= a passing the latency guard, by bisection."""
    if check_latency_guard(sr1, a, tps, latency_s, threshold):
        return a
    if sr1 / 100.0 <= threshold:
        raise DegenerateDerivationError(f"sr1={sr1} sits at or below threshold {threshold}; no reward factor passes")

    margin = lambda x: sr1 / 100.0 * (1.0 - x) ** (tps * latency_s) - threshold
    root = bisect(margin, 0.0, a, xtol=ROOT_TOLERANCE)
    # Step below the root so the strict inequality holds.
    while margin(root) <= 0.0:
        root = math.nextafter(root, 0.0)
    return float(root)


def derive_sigma_factor(tps: float, allowed_false_downtimes_per_day: float = 1.0) -> float:
    """
    Sigma factor making the expected count of false DOWN evaluations per day
    equal the allowance, one evaluation per transaction.
    """
    if tps <= 0:
        raise InvalidParameterError(f"tps must be positive, got {tps}")
    if allowed_false_downtimes_per_day <= 0:
        raise InvalidParameterError(
            f"allowed false downtimes per day must be positive, got {allowed_false_downtimes_per_day}"
        )
    p = allowed_false_downtimes_per_day / (tps * SECONDS_PER_DAY)
    if p >= 0.5:
        raise DegenerateDerivationError(f"allowance {allowed_false_downtimes_per_day}/day is too loose for tps={tps}")
    return -std_normal_ppf(p)


def default_sr2(sr1: float, gap: float = 30.0, floor: float = 5.0) -> float:
    _check_sr(sr1, "sr1")
    return max(sr1 - gap, floor)


def derive_downtime(sr1: float, sr2: float, sigma: float, tps: float, latency_s: float,
                    exact_root: bool = False) -> DowntimeDerivation:
    """
    Everything the CLI and scenarios need for one dimension.

    When the latency guard fails the reward factor is lowered to the largest
    passing value and reported as adjusted_reward_factor.
    """
    if tps <= 0 or latency_s < 0:
        raise InvalidParameterError(f"need tps > 0 and latency >= 0, got tps={tps}, latency={latency_s}")
    a = derive_reward_factor(sr1, sr2, sigma)
    threshold = derive_threshold(sr1, sr2, exact_root=exact_root)
    latency_ok = check_latency_guard(sr1, a, tps, latency_s, threshold)
    adjusted = None if latency_ok else adjust_reward_factor_for_latency(sr1, a, tps, latency_s, threshold)
    return DowntimeDerivation(
        sr1=sr1,
        sr2=sr2,
        sigma_factor=sigma,
        tps=tps,
        avg_latency_s=latency_s,
        reward_factor=a,
        threshold=threshold,
        k=k_factor(sr1, sr2, sigma),
        t_c=detection_count(sr1, sr2, sigma),
        latency_ok=latency_ok,
        adjusted_reward_factor=adjusted,
        exact_root=exact_root,
    )


# ----------------------------------------------------------------------
# Monte-Carlo of the combined per-transaction recurrence
# ----------------------------------------------------------------------
def simulate_score_trajectory(successes: np.ndarray, a: float, v0: float) -> np.ndarray:
    """
    Score after each step of v <- (1 - a) v + a * success, starting from v0.

    Equals penalize-then-reward per transaction (the reward clamp never binds
    from v <= 1).
    """
    x = np.asarray(successes, dtype=float)
    y, _ = lfilter([a], [1.0, -(1.0 - a)], x, zi=[(1.0 - a) * v0])
    return y


def stationary_monte_carlo(sr: float, a: float, steps: int = 1_000_000, seed: int = 0,
                           burn_in: int | None = None) -> tuple[float, float]:
    """Empirical (mean, std) of the score under stationary traffic, started at the mean."""
    mean, _ = stationary_stats(sr, a)
    rng = np.random.default_rng(seed)
    burn_in = int(10 / a) if burn_in is None else burn_in
    v = simulate_score_trajectory(rng.random(steps + burn_in) < sr / 100.0, a, mean)[burn_in:]
    return float(v.mean()), float(v.std())


def false_downtime_fraction(sr1: float, a: float, threshold: float, steps: int = 1_000_000, seed: int = 0) -> float:
    """Fraction of steps a healthy gateway (stationary sr1) spends below the threshold."""
    mean, _ = stationary_stats(sr1, a)
    rng = np.random.default_rng(seed)
    v = simulate_score_trajectory(rng.random(steps) < sr1 / 100.0, a, mean)
    return float(np.mean(v < threshold))


def gaussian_false_downtime_bound(sr1: float, sr2: float, a: float, slack: float = 5.0) -> float:
    """slack * P(Z < -0.71 (sr1 - sr2) / (100 std)): one-sided tail bound on the DOWN fraction."""
    _, std = stationary_stats(sr1, a)
    return slack * std_normal_cdf(-THRESHOLD_WEIGHT_SR2 * (sr1 - sr2) / (100.0 * std))


def simulate_detection_counts(sr1: float, sr2: float, a: float, threshold: float, runs: int = 200,
                              warmup: int | None = None, max_steps: int | None = None,
                              seed: int = 0) -> np.ndarray:
    """
    Transactions after a drop sr1 -> sr2 until the score first sits below threshold.

    Each run warms up at sr1 from a score of 1.0 and then applies post-drop
    transactions one at a time; the count is the number applied before the
    first below-threshold evaluation. Runs that never cross within max_steps
    report max_steps.
    """
    warmup = int(20 / a) if warmup is None else warmup
    max_steps = int(200 / a) if max_steps is None else max_steps
    rng = np.random.default_rng(seed)
    counts = np.empty(runs, dtype=np.int64)
    for i in range(runs):
        pre = simulate_score_trajectory(rng.random(warmup) < sr1 / 100.0, a, 1.0)
        v_drop = pre[-1] if warmup else 1.0
        if v_drop < threshold:
            counts[i] = 0
            continue
        post = simulate_score_trajectory(rng.random(max_steps) < sr2 / 100.0, a, v_drop)
        below = post < threshold
        counts[i] = int(np.argmax(below)) + 1 if below.any() else max_steps
    return counts
