import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from pmquad.constants import (
    BETA,
    beta_fn,
    constants,
    gamma_fn,
    limit_moments,
    mean_curve,
    mean_curve_scaled,
    moment_recurrence,
    recurrence_c2,
)

mpmath.mp.dps = 40


@pytest.mark.parametrize("x, expected", [(1, 1.0), (5, 24.0), (0.5, 1.772453850905516)])
def test_gamma_known_values(x, expected):
    assert gamma_fn(x) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("x", [0.0, -1.0, -0.5, float("nan")])
def test_gamma_domain(x):
    with pytest.raises(ValueError):
        gamma_fn(x)


def test_gamma_against_mpmath():
    for x in np.linspace(0.01, 50.0, 400):
        ref = mpmath.gamma(mpmath.mpf(float(x)))
        assert abs(gamma_fn(x) / float(ref) - 1) < 1e-12, x


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=1e-3, max_value=19.999))
def test_gamma_recurrence(x):
    assert gamma_fn(x + 1) == pytest.approx(x * gamma_fn(x), rel=1e-11)


@pytest.mark.parametrize("a, b, expected", [(1, 1, 1.0), (2, 2, 1 / 6)])
def test_beta_known_values(a, b, expected):
    assert beta_fn(a, b) == pytest.approx(expected, rel=1e-14)


def test_beta_at_beta_plus_one_matches_quadrature():
    direct = beta_fn(BETA + 1, BETA + 1)
    integral, _ = quad(lambda x: x**BETA * (1 - x) ** BETA, 0, 1, epsabs=1e-14, limit=200)
    assert direct == pytest.approx(integral, rel=1e-12)
    via_gamma = gamma_fn(BETA + 1) ** 2 / gamma_fn(2 * BETA + 2)
    assert direct == pytest.approx(via_gamma, rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=1e-3, max_value=10), st.floats(min_value=1e-3, max_value=10))
def test_beta_symmetric(a, b):
    assert beta_fn(a, b) == pytest.approx(beta_fn(b, a), rel=1e-14)


def test_beta_domain():
    with pytest.raises(ValueError):
        beta_fn(0, 1)
    with pytest.raises(ValueError):
        beta_fn(1, -2)


def test_beta_large_arguments_use_log_path():
    ref = mpmath.beta(120, 95)
    assert beta_fn(120, 95) == pytest.approx(float(ref), rel=1e-11)


def test_exponent():
    ref = (mpmath.sqrt(17) - 3) / 2
    assert BETA == pytest.approx(float(ref), abs=1e-16)
    assert BETA == pytest.approx(0.5615528128088303, abs=1e-16)
    assert abs(BETA**2 + 3 * BETA - 2) < 1e-12
    assert 0 < BETA < 1


def test_constants_table():
    c = constants()
    assert c.k4 == pytest.approx(0.447363034, abs=5e-9)
    assert c.edge_exp == pytest.approx(0.4142135623730951, abs=1e-15)
    assert c.k4 == c.k1**2 * c.var_z_xi
    for v in (c.kappa, c.k1, c.c2, c.k4, c.var_z_xi):
        assert 0 < v < math.inf


def test_constants_in_high_precision():
    b = (mpmath.sqrt(17) - 3) / 2
    G = mpmath.gamma
    B = mpmath.beta
    kappa = G(2 * b + 2) / (2 * G(b + 1) ** 3)
    k1 = G(2 * b + 2) * G(b + 2) / (2 * G(b + 1) ** 3 * G(b / 2 + 1) ** 2)
    c2 = 2 * B(b + 1, b + 1) * (2 * b + 1) / (3 * (1 - b))
    var = c2 * B(b + 1, b + 1) - B(b / 2 + 1, b / 2 + 1) ** 2
    c = constants()
    assert c.kappa == pytest.approx(float(kappa), rel=1e-13)
    assert c.k1 == pytest.approx(float(k1), rel=1e-13)
    assert c.c2 == pytest.approx(float(c2), rel=1e-13)
    assert c.var_z_xi == pytest.approx(float(var), rel=1e-11)
    assert c.k4 == pytest.approx(float(k1**2 * var), rel=1e-11)


def test_c2_solves_its_balance_equation():
    c = constants()
    bb = beta_fn(BETA + 1, BETA + 1)
    rhs = 2 / ((2 * BETA + 1) * (BETA + 1)) * c.c2 + 2 * bb / (BETA + 1)
    assert c.c2 == pytest.approx(rhs, rel=1e-14)


def test_recurrence_first_terms():
    assert moment_recurrence(1).values == (1.0,)
    bb = beta_fn(BETA + 1, BETA + 1)
    hand = 4 * (2 * BETA + 1) * bb / (3 * (1 - BETA))
    assert recurrence_c2() == pytest.approx(hand, rel=1e-14)
    # The printed recurrence gives twice the integral-equation constant.
    assert recurrence_c2() == pytest.approx(2 * constants().c2, rel=1e-14)
    assert limit_moments(2)[2] == pytest.approx(constants().c2, rel=1e-14)


def test_recurrence_third_moment_by_hand():
    b = BETA
    c2 = constants().c2
    s = 3 * beta_fn(b + 1, 2 * b + 1) * c2 + 3 * beta_fn(2 * b + 1, b + 1) * c2
    expected = (3 * b + 1) / (2 * (4 - 4.5 * b)) * s
    assert limit_moments(3)[3] == pytest.approx(expected, rel=1e-13)


def test_recurrence_positive_and_large_m():
    seq = moment_recurrence(60)
    assert len(seq) == 60
    assert all(v > 0 and math.isfinite(v) for v in seq.values)
    assert all(v > 0 for v in limit_moments(60).values)


def test_recurrence_rejects_bad_m():
    with pytest.raises(ValueError):
        moment_recurrence(0)


def test_mean_curve():
    assert mean_curve(0.0) == 0.0
    assert mean_curve(1.0) == 0.0
    assert mean_curve(0.5) == pytest.approx(2 ** (-BETA), rel=1e-15)
    assert mean_curve(0.5) == pytest.approx(0.677568, abs=1e-5)
    assert mean_curve_scaled(0.5) == pytest.approx(constants().k1 * 2 ** (-BETA), rel=1e-15)
    with pytest.raises(ValueError):
        mean_curve(1.5)


@given(st.floats(min_value=1e-6, max_value=1.0 - 1e-6))
def test_mean_curve_symmetric(s):
    # 1 - (1 - s) differs from s by rounding, relative 1e-10 at worst here.
    assert mean_curve(s) == pytest.approx(mean_curve(1.0 - s), rel=1e-9)
