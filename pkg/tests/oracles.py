"""Independent reference implementations used by the tests.

These deliberately avoid the package's kernels and helpers: window sums
come from direct slicing, scores from the textbook formulas, and series
constants from mpmath at high precision.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np

LAMBDA_S = 2 * (math.sqrt(2) - 1)


def direct_z(x: np.ndarray, t: int, k: int) -> np.ndarray:
    """z-scores of the last ``k`` rows ending at time ``t`` (1-based), per stream."""
    return x[t - k:t].sum(axis=0) / math.sqrt(k)


def per_stream_score(rule: str, z: np.ndarray, k: int, *, p0=None, mu0=1.0,
                     lam=LAMBDA_S) -> float:
    zp = np.maximum(z, 0.0)
    if rule == "MAX":
        return float(np.max(zp**2 / 2))
    if rule == "XS":
        return float(np.sum(np.log(1 - p0 + p0 * np.exp(zp**2 / 2))))
    if rule == "S":
        return float(np.sum(np.log(1 - p0 + p0 * lam * np.exp(zp**2 / 4))))
    if rule == "LR":
        s = z * math.sqrt(k)
        return float(np.sum(np.maximum(mu0 * s - k * mu0**2 / 2 + math.log(p0), 0.0)))
    raise ValueError(rule)


def brute_window_stat(rule: str, x: np.ndarray, t: int, windows, **kw) -> float:
    """Statistic at time ``t`` for a window-limited rule, by direct sums."""
    best = -math.inf
    for k in windows:
        if k > t:
            break
        best = max(best, per_stream_score(rule, direct_z(x, t, k), k, **kw))
    return best


def brute_stopping_time(rule: str, x: np.ndarray, b: float, windows, **kw):
    for t in range(1, x.shape[0] + 1):
        if brute_window_stat(rule, x, t, windows, **kw) >= b:
            return t
    return None


def cusum_window_max(x: np.ndarray, mu0: float) -> np.ndarray:
    """CUSUM as ``max(0, max_s sum_{i=s..t} (mu0 x_i - mu0^2/2))``, shape (T, N)."""
    inc = mu0 * x - mu0**2 / 2
    T = x.shape[0]
    out = np.zeros_like(x)
    for t in range(T):
        tails = np.cumsum(inc[t::-1], axis=0)  # sums over s = t, t-1, ..., 0
        out[t] = np.maximum(tails.max(axis=0), 0.0)
    return out


def phi(x) -> mpmath.mpf:
    return mpmath.ncdf(x)


def alpha_series(mu0: float, dps: int = 30) -> float:
    """Renewal tail constant by summing the series in mpmath to convergence."""
    with mpmath.workdps(dps):
        mu = mpmath.mpf(mu0)
        total = mpmath.nsum(lambda j: mpmath.ncdf(-mu * mpmath.sqrt(j) / 2) / j, [1, mpmath.inf])
        return float(2 / mu**2 * mpmath.exp(-2 * total))


def spitzer_xi(mu0: float, dps: int = 30) -> float:
    """``lim E exp(R/2)`` for the null CUSUM, via Spitzer's identity.

    For a random walk with N(-mu0^2/2, mu0^2) steps,
    ``log E exp(s M) = sum_n n^-1 E[(exp(s S_n) - 1); S_n > 0]``, and each
    term has a closed form in Gaussian integrals.
    """
    with mpmath.workdps(dps):
        mu = mpmath.mpf(mu0)

        def term(n):
            m = -n * mu**2 / 2
            sd = mu * mpmath.sqrt(n)
            # E[exp(S/2); S>0] with S ~ N(m, sd^2)
            a = mpmath.exp(m / 2 + sd**2 / 8) * mpmath.ncdf((m + sd**2 / 2) / sd)
            return (a - mpmath.ncdf(m / sd)) / n

        return float(mpmath.exp(mpmath.nsum(term, [1, mpmath.inf])))
