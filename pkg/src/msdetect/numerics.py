"""Special functions and renewal constants shared by the detectors.

The CUSUM-based rules need three constants that depend only on the assumed
drift ``mu0``:

* ``alpha``: tail constant of the stationary CUSUM score, so that
  ``P(R >= x) ~ alpha * exp(-x)`` for large ``x``;
* ``lambda_m = 1 / (1 + alpha)``: the mixture weight that makes the
  CUSUM detectability score continuous at zero;
* ``xi = lim E exp(R_t / 2)`` under the null, estimated by simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from msdetect import _kernels
from msdetect.model import derive_trial_seed

_SQRT2 = math.sqrt(2.0)


class EmptyMixtureError(ValueError):
    """Both mixture components carry zero weight."""


@dataclass(frozen=True)
class RenewalConstants:
    mu0: float
    alpha: float
    lambda_m: float
    xi_hat: float
    xi_se: float

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 < self.lambda_m < 1:
            raise ValueError("lambda_m must lie in (0, 1)")
        if self.xi_hat < 1:
            raise ValueError("xi_hat must be >= 1")

    @classmethod
    def compute(cls, mu0: float, *, tol: float = 1e-10, seed: int = 0,
                **xi_kwargs) -> RenewalConstants:
        alpha = renewal_alpha(mu0, tol)
        xi_hat, xi_se = estimate_xi(mu0, seed=seed, **xi_kwargs)
        return cls(mu0, alpha, 1.0 / (1.0 + alpha), xi_hat, xi_se)


def std_normal_cdf(x: float) -> float:
    """Standard normal CDF, accurate in both tails."""
    return 0.5 * math.erfc(-x / _SQRT2)


def log_mixture_score(log_base: float, log_bump: float) -> float:
    """Stable ``log(exp(log_base) + exp(log_bump))``."""
    if log_base == -math.inf and log_bump == -math.inf:
        raise EmptyMixtureError("empty mixture: both log-weights are -inf")
    hi = max(log_base, log_bump)
    lo = min(log_base, log_bump)
    if lo == -math.inf:
        return hi
    return hi + math.log1p(math.exp(lo - hi))


def _tail_bound(mu0: float, j: int) -> float:
    # sum_{i>j} Phi(-mu0 sqrt(i)/2)/i <= q^(j+1) / ((j+1)(1-q)),  q = exp(-mu0^2/8)
    q = math.exp(-mu0 * mu0 / 8.0)
    return q ** (j + 1) / ((j + 1) * -math.expm1(-mu0 * mu0 / 8.0))


def renewal_alpha(mu0: float, tol: float = 1e-10) -> float:
    """Tail constant ``alpha`` of the stationary CUSUM score with drift ``mu0``.

    Evaluates ``2/mu0^2 * exp(-2 * sum_j Phi(-mu0*sqrt(j)/2) / j)`` with the
    series truncated once the Gaussian tail bound on the remainder drops
    below ``tol * mu0^2 / 4``; that keeps the error in ``alpha`` under ``tol``.
    """
    if not mu0 > 0:
        raise ValueError(f"mu0 must be positive, got {mu0}")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    target = tol * mu0 * mu0 / 4.0
    total = 0.0
    j = 0
    while True:
        j += 1
        total += std_normal_cdf(-mu0 * math.sqrt(j) / 2.0) / j
        if _tail_bound(mu0, j) < target:
            break
    return 2.0 / (mu0 * mu0) * math.exp(-2.0 * total)


def lambda_m(mu0: float, tol: float = 1e-10) -> float:
    return 1.0 / (1.0 + renewal_alpha(mu0, tol))


def default_burn_in(mu0: float) -> int:
    return 10 * math.ceil(4.0 / (mu0 * mu0) * math.log(1e6))


def estimate_xi(
    mu0: float,
    burn_in: int | None = None,
    horizon: int | None = None,
    trials: int = 200,
    seed: int = 0,
    *,
    thin: int = 10,
    chunk: int = 1 << 16,
) -> tuple[float, float]:
    """Monte Carlo estimate of ``xi = lim E exp(R_t/2)`` under the null.

    Each trial runs one CUSUM chain from ``R_0 = 0``, discards ``burn_in``
    steps and averages ``exp(R_t/2)`` over every ``thin``-th step up to
    ``horizon``. Returns the mean of the trial averages and its standard
    error.

    ``exp(R/2)`` sits on the edge of having infinite variance (its tail
    decays like ``y**-2``), so the standard error converges a little slower
    than ``1/sqrt(samples)``; budget accordingly.
    """
    if not mu0 > 0:
        raise ValueError(f"mu0 must be positive, got {mu0}")
    if burn_in is None:
        burn_in = default_burn_in(mu0)
    if horizon is None:
        horizon = burn_in + 100_000 * thin
    if horizon <= burn_in:
        raise ValueError(f"horizon ({horizon}) must exceed burn_in ({burn_in})")
    if trials < 2:
        raise ValueError("need at least two trials for a standard error")
    means = np.empty(trials)
    for i in range(trials):
        rng = np.random.Generator(np.random.PCG64(derive_trial_seed(seed, i)))
        r = 0.0
        acc = 0.0
        count = 0
        t = 0
        while t < horizon:
            m = min(chunk, horizon - t)
            noise = rng.standard_normal(m)
            r, s, c = _kernels.cusum_exp_half_sum(r, noise, mu0, t, burn_in, thin)
            acc += s
            count += c
            t += m
        means[i] = acc / count
    return float(means.mean()), float(means.std(ddof=1) / math.sqrt(trials))
