"""Asymptotic calculators for sparse multi-stream detection.

With ``N`` streams, a fraction ``p ~ N**-beta`` of them shifting, and an ARL
constraint ``log(gamma) ~ N**zeta``, the optimal detection delay falls into
one of three domains:

* immediate   ``beta < (1 - zeta)/2``: delay tends to 1;
* logarithmic ``(1 - zeta)/2 < beta < 1 - zeta``: delay ~ ``2 rho / mu^2 * log N``;
* polynomial  ``beta > 1 - zeta``: ``log(delay) / log N -> beta + zeta - 1``.

The same formulas hold when the number of shifted streams is fixed at
``m ~ N**(1 - beta)`` (minimax setting) instead of Bernoulli sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from msdetect.numerics import lambda_m as renewal_lambda_m

IMMEDIATE = "immediate"
LOGARITHMIC = "logarithmic"
POLYNOMIAL = "polynomial"
BOUNDARY = "boundary"

_EDGE_TOL = 1e-12


class DomainError(ValueError):
    """Arguments fall outside the regime where a formula applies."""

    def __init__(self, message: str, regime: str | None = None):
        super().__init__(message)
        self.regime = regime


@dataclass(frozen=True)
class AsymptoticRegime:
    beta: float
    zeta: float
    mu: float = 1.0
    n_streams: int = 10_000
    gamma: float = 5000.0

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not 0 <= self.zeta < 1:
            raise ValueError("zeta must lie in [0, 1)")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.n_streams < 2:
            raise ValueError("n_streams must be >= 2")

    @property
    def domain(self) -> str:
        return classify_domain(self.beta, self.zeta)


class WindowLength(NamedTuple):
    k: int
    degenerate: bool


def classify_domain(beta: float, zeta: float) -> str:
    lo = (1.0 - zeta) / 2.0
    hi = 1.0 - zeta
    if abs(beta - lo) <= _EDGE_TOL or abs(beta - hi) <= _EDGE_TOL:
        return BOUNDARY
    if beta < lo:
        return IMMEDIATE
    if beta < hi:
        return LOGARITHMIC
    return POLYNOMIAL


def rho(beta: float, zeta: float = 0.0) -> float:
    """Detection-boundary constant of the logarithmic domain."""
    domain = classify_domain(beta, zeta)
    if domain != LOGARITHMIC:
        raise DomainError(
            f"rho(beta={beta}, zeta={zeta}) is defined only for "
            f"{(1 - zeta) / 2:g} < beta < {1 - zeta:g}; this point is in the {domain} regime",
            domain,
        )
    if beta <= 0.75 * (1.0 - zeta):
        return beta - (1.0 - zeta) / 2.0
    return (math.sqrt(1.0 - zeta) - math.sqrt(1.0 - zeta - beta)) ** 2


def delay_asymptote(regime: AsymptoticRegime) -> tuple[str, float | None]:
    """Leading-order optimal detection delay for ``regime``.

    Returns ``(domain, value)``; ``value`` is None on a domain boundary.
    """
    domain = regime.domain
    n = regime.n_streams
    if domain == IMMEDIATE:
        return domain, 1.0
    if domain == LOGARITHMIC:
        return domain, 2.0 / regime.mu**2 * rho(regime.beta, regime.zeta) * math.log(n)
    if domain == POLYNOMIAL:
        return domain, float(n) ** (regime.beta + regime.zeta - 1.0)
    return domain, None


def optimal_p0(n_streams: int, gamma: float, c: float = 1.0, *, slow: bool = False) -> float:
    """Recommended mixing weight ``c * sqrt(log(gamma) / N)``, clamped to (0, 1].

    ``slow=True`` gives ``c / sqrt(N)``, suited to ARL targets growing slower
    than any power of ``N``.
    """
    if not c > 0:
        raise ValueError("c must be positive")
    if slow:
        p0 = c / math.sqrt(n_streams)
    else:
        if not gamma > 1:
            raise ValueError("gamma must exceed 1")
        p0 = c * math.sqrt(math.log(gamma) / n_streams)
    return min(p0, 1.0)


def optimal_mu0(regime: AsymptoticRegime) -> float:
    """CUSUM drift that makes the transformed Mei rule optimal; in [mu, 2 mu]."""
    domain = regime.domain
    if domain != LOGARITHMIC:
        raise DomainError(f"optimal mu0 requires the logarithmic domain, got {domain}", domain)
    if regime.beta <= 0.75 * (1.0 - regime.zeta):
        return 2.0 * regime.mu
    return regime.mu * math.sqrt((1.0 - regime.zeta) / rho(regime.beta, regime.zeta))


def _floor_k(x: float) -> WindowLength:
    k = math.floor(x)
    if k < 1:
        return WindowLength(1, True)
    return WindowLength(k, False)


def k_lower(regime: AsymptoticRegime, delta: float) -> WindowLength:
    """Window length used for the delay lower bound (``degenerate`` if < 1)."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    domain = regime.domain
    if domain == IMMEDIATE:
        return WindowLength(1, False)
    if domain == LOGARITHMIC:
        base = 2.0 / regime.mu**2 * rho(regime.beta, regime.zeta) * math.log(regime.n_streams)
        return _floor_k((1.0 - delta) * base)
    if domain == POLYNOMIAL:
        return _floor_k(delta * regime.n_streams ** (regime.beta + regime.zeta - 1.0))
    raise DomainError("window length undefined on a domain boundary", domain)


def k_upper(regime: AsymptoticRegime, delta: float, m_big: float | None = None) -> WindowLength:
    """Window length that suffices for detection (achievability side)."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    domain = regime.domain
    if domain == IMMEDIATE:
        return WindowLength(1, False)
    if domain == LOGARITHMIC:
        base = 2.0 / regime.mu**2 * rho(regime.beta, regime.zeta) * math.log(regime.n_streams)
        return _floor_k((1.0 + delta) * base)
    if domain == POLYNOMIAL:
        floor_m = 32.0 / regime.mu**2
        if m_big is None:
            m_big = 2.0 * floor_m
        if not m_big > floor_m:
            raise DomainError(f"m_big must exceed 32/mu^2 = {floor_m:g}", domain)
        return _floor_k(m_big * regime.n_streams ** (regime.beta + regime.zeta - 1.0))
    raise DomainError("window length undefined on a domain boundary", domain)


def ts_threshold_bound(gamma: float) -> float:
    """Threshold that guarantees ARL >= gamma for the detectability-score rule."""
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    return math.log(4.0 * gamma * gamma + 2.0 * gamma)


def mei_threshold_bound(n_streams: int, gamma: float, p0: float, mu0: float,
                        xi_hat: float, lambda_m: float | None = None) -> float:
    """Threshold that guarantees ARL >= gamma for the transformed Mei rule."""
    if xi_hat < 1:
        raise ValueError("xi_hat must be >= 1")
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    lam = renewal_lambda_m(mu0) if lambda_m is None else lambda_m
    arg = p0 * (lam * xi_hat - 1.0)
    if arg <= -1.0:
        raise DomainError("p0 * (lambda_m * xi - 1) must exceed -1")
    return n_streams * math.log1p(arg) + math.log(4.0 * gamma)


def mei_raw_threshold_bound(n_streams: int, gamma: float, xi_hat: float) -> float:
    """The p0 = 1 bound mapped onto the raw CUSUM-sum scale.

    With ``p0 = 1`` the transformed statistic is ``N log(lambda_m) + sum(R)/2``,
    so a raw threshold ``b`` corresponds to ``N log(lambda_m) + b/2`` and
    ``lambda_m`` cancels.
    """
    if xi_hat < 1:
        raise ValueError("xi_hat must be >= 1")
    return 2.0 * (n_streams * math.log(xi_hat) + math.log(4.0 * gamma))


def theory_report(beta: float, zeta: float, mu: float, n_streams: int, gamma: float,
                  *, c: float = 1.0, delta: float = 0.1, xi_hat: float | None = None,
                  mu0: float | None = None) -> dict:
    """Everything the ``theory`` subcommand prints, as a JSON-ready dict."""
    regime = AsymptoticRegime(beta, zeta, mu, n_streams, gamma)
    domain, value = delay_asymptote(regime)
    if domain == BOUNDARY:
        raise DomainError(
            f"beta={beta} sits on a domain boundary for zeta={zeta} "
            f"((1-zeta)/2 = {(1 - zeta) / 2:g}, 1-zeta = {1 - zeta:g}); "
            "the asymptotics exclude boundary points",
            domain,
        )
    report: dict = {
        "domain": domain,
        "rho": rho(beta, zeta) if domain == LOGARITHMIC else None,
        "delay_asymptote": value,
        "p0_recommendation": {
            "arl_scaled": optimal_p0(n_streams, gamma, c),
            "slow_growth": optimal_p0(n_streams, gamma, c, slow=True),
            "c": c,
        },
        "mu0_recommendation": optimal_mu0(regime) if domain == LOGARITHMIC else None,
        "k_range": {
            "lower": k_lower(regime, delta)._asdict(),
            "upper": k_upper(regime, delta)._asdict(),
            "delta": delta,
        },
        "threshold_bounds": {"S": ts_threshold_bound(gamma)},
    }
    if xi_hat is not None:
        p0 = report["p0_recommendation"]["arl_scaled"]
        m0 = mu if mu0 is None else mu0
        report["threshold_bounds"]["MEI_EXT"] = mei_threshold_bound(n_streams, gamma, p0, m0, xi_hat)
        report["threshold_bounds"]["MEI"] = mei_raw_threshold_bound(n_streams, gamma, xi_hat)
        report["threshold_bounds"]["xi_hat"] = xi_hat
    return report
