import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ellipsoid_gaussian.special import (
    _log_hankel_sum,
    _log_series_sum,
    bessel_ratio,
    inverse_bessel_ratio,
    log_bessel_i,
    log_bessel_i_scaled,
    log_vmf_const,
)

# (v, x, log I_v(x)) from mpmath at 40 digits
LOG_BESSEL = [
    (0, 2, 0.82399354148295628293),
    (0, 1e-08, 2.500000000000000089e-17),
    (0.5, 3.7, 2.1262836173179771044),
    (1, 0.1, -2.9944825338622048841),
    (1.5, 40, 37.211303931754069231),
    (2.5, 250, 246.3083070084457707),
    (7, 31, 27.568281071652729847),
    (10, 1000.0, 995.57728428064997687),
    (0, 1000000.0, 999992.17330631281325),
    (3.5, 29.9, 27.078237584522072096),
    (3.5, 30.1, 27.276279339628550487),
]

# (k, tau, log C_k(tau))
LOG_VMF = [
    (2, 2.0, -0.82399354148295628293),
    (3, 0.5, -0.041324854612918108978),
    (4, 10.0, -6.2807659216701119189),
    (8, 10000.0, -9970.7156336539125818),
    (5, 1e-06, -9.9999999999998562378e-14),
]

# (k, tau, I_{k/2}(tau) / I_{k/2-1}(tau))
RATIO = [
    (2, 2.0, 0.69777465796400798201),
    (3, 1.0, 0.31303528549933130364),
    (4, 0.3, 0.074720322596553699699),
    (6, 50.0, 0.95076516375735044081),
    (10, 1000.0, 0.99550788285570415094),
]


def series_log_bessel(v, x, terms=400):
    """Plain ascending series in extended precision via math.fsum."""
    half = x / 2.0
    parts = [math.exp(2 * m * math.log(half) - math.lgamma(m + 1) - math.lgamma(m + v + 1)) for m in range(terms)]
    return v * math.log(half) + math.log(math.fsum(parts))


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


@pytest.mark.parametrize("v, x, expected", LOG_BESSEL)
def test_log_bessel_matches_high_precision(v, x, expected):
    got = log_bessel_i(v, x)
    # tiny log values: compare I itself rather than its log
    if abs(expected) < 1e-6:
        assert abs(got - expected) < 1e-16
    else:
        assert rel(got, expected) < 1e-10


def test_log_bessel_trivial_values():
    assert log_bessel_i(0, 0) == 0.0
    assert log_bessel_i(1, 0) == -math.inf
    assert log_bessel_i_scaled(0, 0) == 0.0


def test_i0_at_two_matches_series():
    assert rel(log_bessel_i(0, 2.0), series_log_bessel(0, 2.0)) < 1e-13


@pytest.mark.parametrize("v", [0.0, 0.5, 1.0, 2.5, 4.0, 7.5, 10.0])
@pytest.mark.parametrize("x", [0.01, 0.7, 3.0, 11.0, 19.5, 30.0])
def test_log_bessel_against_series_grid(v, x):
    assert rel(log_bessel_i(v, x), series_log_bessel(v, x)) < 1e-10


@pytest.mark.parametrize("v", [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 3.5])
def test_regimes_agree_at_crossover(v):
    # both branches evaluated at the switch point itself
    x = max(30.0, 2.0 * v * v)
    series = v * math.log(0.5 * x) - math.lgamma(v + 1.0) + _log_series_sum(v, x)
    hankel = x - 0.5 * math.log(2.0 * math.pi * x) + _log_hankel_sum(v, x)
    assert rel(series, hankel) < 1e-10


def test_scaled_consistent_with_unscaled():
    for v, x in [(0, 5.0), (2, 80.0), (0.5, 1e5)]:
        assert abs(log_bessel_i_scaled(v, x) + x - log_bessel_i(v, x)) < 1e-9 * log_bessel_i(v, x)


@pytest.mark.parametrize("v, x", [(-1, 1.0), (0, -1.0), (0, math.nan), (math.inf, 1.0), (0, math.inf)])
def test_log_bessel_domain_errors(v, x):
    with pytest.raises(ValueError):
        log_bessel_i(v, x)


def test_log_bessel_finite_at_large_argument():
    assert math.isfinite(log_bessel_i(0, 1e6))
    assert math.isfinite(log_bessel_i(3, 1e8))


@pytest.mark.parametrize("k, tau, expected", LOG_VMF)
def test_log_vmf_const_values(k, tau, expected):
    got = log_vmf_const(k, tau)
    assert abs(got - expected) <= 1e-10 * max(1.0, abs(expected))


def test_log_vmf_const_trivial():
    assert log_vmf_const(5, 0.0) == 0.0
    assert log_vmf_const(2, 2.0) == pytest.approx(-series_log_bessel(0, 2.0), rel=1e-13)


@pytest.mark.parametrize("k, tau", [(1, 1.0), (2, -0.1), (2.5, 1.0), (3, math.nan)])
def test_log_vmf_const_domain(k, tau):
    with pytest.raises(ValueError):
        log_vmf_const(k, tau)


@pytest.mark.parametrize("k, tau", [(2, 1.0), (3, 3.0), (5, 0.5), (4, 8.0)])
def test_vmf_const_normalizes_uniform_average(k, tau):
    rng = np.random.default_rng(k * 1000 + int(tau * 10))
    g = rng.standard_normal((1_000_000, k))
    z1 = g[:, 0] / np.linalg.norm(g, axis=1)
    avg = np.mean(np.exp(tau * z1 - tau))
    total = math.exp(log_vmf_const(k, tau) + tau) * avg
    assert abs(total - 1.0) < 0.005


@pytest.mark.parametrize("k, tau, expected", RATIO)
def test_bessel_ratio_values(k, tau, expected):
    assert rel(bessel_ratio(k, tau), expected) < 1e-10


def test_bessel_ratio_langevin_closed_form():
    for tau in [1.0, 0.2, 10.0, 75.0]:
        assert bessel_ratio(3, tau) == pytest.approx(1.0 / math.tanh(tau) - 1.0 / tau, rel=1e-10)
    assert bessel_ratio(3, 1.0) == pytest.approx(0.3130, abs=1e-4)


def test_bessel_ratio_limits():
    for k in [2, 3, 5, 10, 50]:
        assert bessel_ratio(k, 0.0) == 0.0
        assert bessel_ratio(k, 1e8) > 1 - 1e-6
        assert bessel_ratio(k, 1e8) < 1.0
        assert bessel_ratio(k, 1e-6) / 1e-6 == pytest.approx(1.0 / k, rel=1e-4)


@settings(max_examples=200, deadline=None)
@given(
    k=st.integers(min_value=2, max_value=40),
    t1=st.floats(min_value=0.0, max_value=1e6),
    t2=st.floats(min_value=0.0, max_value=1e6),
)
def test_bessel_ratio_bounded_and_monotone(k, t1, t2):
    lo, hi = sorted((t1, t2))
    r_lo, r_hi = bessel_ratio(k, lo), bessel_ratio(k, hi)
    assert 0.0 <= r_lo < 1.0 and 0.0 <= r_hi < 1.0
    assert r_lo <= r_hi + 1e-14


@settings(max_examples=100, deadline=None)
@given(k=st.integers(min_value=2, max_value=20), tau=st.floats(min_value=1e-3, max_value=1e4))
def test_inverse_bessel_ratio_roundtrip(k, tau):
    r = bessel_ratio(k, tau)
    assert inverse_bessel_ratio(k, r) == pytest.approx(tau, rel=1e-6)


def test_inverse_bessel_ratio_domain():
    assert inverse_bessel_ratio(3, 0.0) == 0.0
    with pytest.raises(ValueError):
        inverse_bessel_ratio(3, 1.0)
