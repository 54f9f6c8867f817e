"""
Standard normal helpers.

Thin wrappers over scipy.special so callers get a plain float and a clear
error on non-finite input instead of a silent nan.
"""
import math

from scipy.special import ndtr, ndtri

from routing_engine.errors import InvalidParameterError


def std_normal_cdf(z: float) -> float:
    if not math.isfinite(z):
        raise InvalidParameterError(f"normal CDF argument must be finite, got {z}")
    return float(ndtr(z))


def std_normal_ppf(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise InvalidParameterError(f"normal quantile needs p in (0, 1), got {p}")
    return float(ndtri(p))
