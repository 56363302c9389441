"""Unit tests for special functions."""
import math

import mpmath
import numpy as np
import pytest

from smoothreg.errors import DomainError, SpecialFunctionOverflow
from smoothreg.special_math import bessel_k, beta_fn, gamma_fn, log_bessel_k, log_beta, log_gamma


@pytest.mark.parametrize("x,expected", [
    (1.0, 1.0),
    (0.5, 1.7724538509055160),
    (5.0, 24.0),
])
def test_gamma_values(x, expected):
    assert gamma_fn(x) == pytest.approx(expected, rel=1e-14)


def test_gamma_rejects_nonpositive():
    with pytest.raises(DomainError):
        gamma_fn(0.0)
    with pytest.raises(DomainError):
        gamma_fn(-1.5)


def test_gamma_overflow():
    with pytest.raises(SpecialFunctionOverflow):
        gamma_fn(171.0)
    assert math.isfinite(gamma_fn(170.0))


def test_log_gamma_matches_gamma():
    xs = np.array([0.5, 3.2, 40.0])
    assert np.allclose(log_gamma(xs), [math.lgamma(x) for x in xs], rtol=1e-13)
    assert log_gamma(300.0) == pytest.approx(math.lgamma(300.0), rel=1e-13)


@pytest.mark.parametrize("a,b,expected", [
    (1.0, 1.0, 1.0),
    (2.0, 3.0, 1.0 / 12.0),
    (0.5, 0.5, math.pi),
])
def test_beta_values(a, b, expected):
    assert beta_fn(a, b) == pytest.approx(expected, rel=1e-13)
    assert log_beta(a, b) == pytest.approx(math.log(expected), abs=1e-13)


def test_beta_symmetric_and_validated():
    assert beta_fn(2.5, 0.7) == pytest.approx(beta_fn(0.7, 2.5), rel=1e-14)
    with pytest.raises(DomainError):
        beta_fn(0.0, 1.0)


def test_bessel_half_integer_closed_forms():
    assert bessel_k(0.5, 1.0) == pytest.approx(math.sqrt(math.pi / 2) * math.exp(-1.0), rel=1e-14)
    assert bessel_k(0.5, 1.0) == pytest.approx(0.46106850445, rel=1e-10)
    expected = math.sqrt(math.pi / 4) * math.exp(-2.0) * 1.5
    assert bessel_k(1.5, 2.0) == pytest.approx(expected, rel=1e-14)
    assert bessel_k(1.5, 2.0) == pytest.approx(0.17994, rel=1e-4)


@pytest.mark.parametrize("nu,x", [(2.75, 0.3), (0.3, 5.0), (4.5, 0.01), (1.0, 30.0)])
def test_bessel_against_high_precision(nu, x):
    oracle = float(mpmath.besselk(nu, x))
    assert bessel_k(nu, x) == pytest.approx(oracle, rel=1e-12)


def test_bessel_even_in_order():
    assert bessel_k(-2.75, 0.3) == bessel_k(2.75, 0.3)
    assert bessel_k(-0.5, 2.0) == bessel_k(0.5, 2.0)


def test_bessel_domain_and_overflow():
    with pytest.raises(DomainError):
        bessel_k(1.0, 0.0)
    with pytest.raises(SpecialFunctionOverflow):
        bessel_k(200.0, 1e-5)


def test_log_bessel_large_argument():
    """Stays finite where K itself underflows to zero."""
    x = np.array([800.0, 2000.0])
    got = log_bessel_k(1.25, x)
    oracle = [float(mpmath.log(mpmath.besselk(1.25, v))) for v in x]
    assert np.all(np.isfinite(got))
    assert np.allclose(got, oracle, rtol=1e-12)
