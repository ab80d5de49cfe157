import math

import mpmath
import numpy as np
import pytest

from msdetect.numerics import (
    EmptyMixtureError,
    RenewalConstants,
    estimate_xi,
    lambda_m,
    log_mixture_score,
    renewal_alpha,
    std_normal_cdf,
)
from oracles import alpha_series, spitzer_xi


@pytest.mark.parametrize("x", [-38.0, -12.5, -5.0, -1.0, -1e-3, 0.0, 0.7, 3.0, 8.0])
def test_cdf_matches_mpmath(x):
    ref = float(mpmath.ncdf(x))
    assert std_normal_cdf(x) == pytest.approx(ref, rel=1e-13, abs=1e-300)


def test_cdf_simple_values():
    assert std_normal_cdf(0.0) == 0.5
    assert std_normal_cdf(-1.0) == pytest.approx(0.158655, abs=1e-6)
    assert std_normal_cdf(40.0) == 1.0


def test_log_mixture_score_examples():
    assert log_mixture_score(math.log(0.9), math.log(0.1)) == pytest.approx(0.0, abs=1e-15)
    v = log_mixture_score(math.log(0.9), math.log(0.1) + 50)
    assert v == pytest.approx(50 + math.log(0.1) + math.log1p(9 * math.exp(-50)), abs=1e-12)
    assert v == pytest.approx(47.6974, abs=1e-4)
    assert log_mixture_score(-math.inf, 3.0) == 3.0


def test_log_mixture_score_no_overflow():
    assert log_mixture_score(0.0, 2000.0) == pytest.approx(2000.0)


def test_log_mixture_score_empty():
    with pytest.raises(EmptyMixtureError):
        log_mixture_score(-math.inf, -math.inf)


def test_alpha_against_series_oracle():
    for mu0 in (0.3, 1.0, 2.5):
        assert renewal_alpha(mu0) == pytest.approx(alpha_series(mu0), abs=1e-9)


def test_alpha_examples():
    a = renewal_alpha(1.0)
    assert abs(a - 0.5625) <= 0.01
    assert renewal_alpha(10.0) == pytest.approx(0.02, rel=1e-4)
    assert abs(renewal_alpha(1.0, 1e-3) - renewal_alpha(1.0, 1e-9)) < 1e-3


def test_alpha_rejects_bad_input():
    with pytest.raises(ValueError):
        renewal_alpha(0.0)
    with pytest.raises(ValueError):
        renewal_alpha(-1.0)
    with pytest.raises(ValueError):
        renewal_alpha(1.0, tol=0.0)


def test_lambda_m():
    assert lambda_m(1.0) == pytest.approx(0.64, abs=0.005)
    assert lambda_m(10.0) == pytest.approx(0.980, abs=1e-3)
    for mu0 in (0.5, 2.0):
        assert lambda_m(mu0) == pytest.approx(1 / (1 + renewal_alpha(mu0)), rel=1e-15)


def test_xi_estimate_near_exact_value():
    xi, se = estimate_xi(1.0, trials=20, seed=3)
    assert abs(xi - 1.547) <= 0.02
    assert abs(xi - spitzer_xi(1.0)) < max(5 * se, 0.01)


def test_xi_deterministic_and_at_least_one():
    a = estimate_xi(2.0, trials=4, horizon=20_000, seed=9)
    b = estimate_xi(2.0, trials=4, horizon=20_000, seed=9)
    assert a == b
    assert a[0] >= 1.0


def test_xi_large_drift():
    xi, _ = estimate_xi(20.0, trials=4, horizon=10_000)
    assert 1.0 <= xi < 1.05


def test_xi_chunking_invariance():
    a = estimate_xi(1.0, trials=3, horizon=30_000, seed=1, chunk=1000)
    b = estimate_xi(1.0, trials=3, horizon=30_000, seed=1, chunk=7777)
    # same draws, partial sums grouped differently
    assert a == pytest.approx(b, rel=1e-12)


def test_xi_rejects_bad_budget():
    with pytest.raises(ValueError):
        estimate_xi(1.0, burn_in=100, horizon=100)
    with pytest.raises(ValueError):
        estimate_xi(0.0)


def test_renewal_constants():
    rc = RenewalConstants.compute(1.0, trials=4, horizon=50_000)
    assert rc.lambda_m == pytest.approx(1 / (1 + rc.alpha))
    with pytest.raises(ValueError):
        RenewalConstants(1.0, 0.5, 0.6, 0.9, 0.0)
    with pytest.raises(ValueError):
        RenewalConstants(1.0, 0.5, 1.5, 1.5, 0.0)
    assert np.isfinite(rc.xi_se)
