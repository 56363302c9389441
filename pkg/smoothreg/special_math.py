"""Scalar special functions used by the kernels and noise laws.

Thin, validated wrappers over ``scipy.special``. Half-integer Bessel orders
go through the exact finite-sum closed form; every other order uses the
Amos routines behind ``scipy.special.kv``/``kve``.
"""
import logging
import math

import numpy as np
from scipy import special

from smoothreg.errors import DomainError, SpecialFunctionOverflow

logger = logging.getLogger(__name__)

GAMMA_MAX_ARG = 170.0


def _check_positive(name: str, value: float):
    if not np.isfinite(value) or value <= 0:
        raise DomainError(f"{name} must be a positive finite real, got {value}")


def gamma_fn(x: float) -> float:
    """Gamma function on the positive reals.

    Raises DomainError for x <= 0 and SpecialFunctionOverflow for x > 170.
    """
    _check_positive("x", x)
    if x > GAMMA_MAX_ARG:
        raise SpecialFunctionOverflow(f"gamma({x}) overflows float64")
    return float(special.gamma(x))


def log_gamma(x):
    """log Gamma(x) for positive x (scalar or array)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("log_gamma requires positive arguments")
    out = special.gammaln(x)
    return float(out) if out.ndim == 0 else out


def beta_fn(a: float, b: float) -> float:
    """Beta(a, b) = Gamma(a) Gamma(b) / Gamma(a + b)."""
    _check_positive("a", a)
    _check_positive("b", b)
    return float(special.beta(a, b))


def log_beta(a: float, b: float) -> float:
    _check_positive("a", a)
    _check_positive("b", b)
    return float(special.betaln(a, b))


def _half_integer_order(nu: float):
    """Return n if |nu| = n + 1/2 for a non-negative integer n, else None."""
    n = abs(nu) - 0.5
    if n >= 0 and abs(n - round(n)) < 1e-14:
        return int(round(n))
    return None


def _bessel_k_half_integer(n: int, x: float) -> float:
    # K_{n+1/2}(x) = sqrt(pi/(2x)) e^{-x} sum_k (n+k)! / (k! (n-k)!) (2x)^{-k}
    total = 0.0
    for k in range(n + 1):
        coef = math.factorial(n + k) / (math.factorial(k) * math.factorial(n - k))
        total += coef * (0.5 / x) ** k
    return math.sqrt(math.pi / (2.0 * x)) * math.exp(-x) * total


def bessel_k(nu: float, x: float) -> float:
    """Modified Bessel function of the second kind K_nu(x).

    Even in the order, so negative ``nu`` is folded onto ``|nu|``.

    Args:
        nu: Real order.
        x: Positive argument.

    Returns:
        K_nu(x) as a float.

    Raises:
        DomainError: if x is not positive.
        SpecialFunctionOverflow: if x is below the underflow threshold for
            this order and K_nu(x) is not representable.
    """
    _check_positive("x", x)
    nu = abs(float(nu))
    n = _half_integer_order(nu)
    if n is not None and n <= 60:
        try:
            value = _bessel_k_half_integer(n, x)
        except OverflowError as exc:
            raise SpecialFunctionOverflow(f"K_{nu}({x}) overflows float64") from exc
    else:
        value = float(special.kv(nu, x))
    if not np.isfinite(value):
        raise SpecialFunctionOverflow(f"K_{nu}({x}) overflows float64")
    return value


def log_bessel_k(nu: float, x):
    """log K_nu(x) for an array of positive x, stable for large x.

    Uses the exponentially scaled ``kve`` so that log K_nu(x) = log kve - x
    never underflows; the small-x end overflows only where K_nu itself does.
    """
    x = np.asarray(x, dtype=float)
    with np.errstate(divide='ignore'):
        out = np.log(special.kve(abs(nu), x)) - x
    if np.any(~np.isfinite(out)):
        raise SpecialFunctionOverflow(f"log K_{nu} not finite on the given arguments")
    return out
