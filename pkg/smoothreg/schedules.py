"""Hyperparameter schedules for smoothing scale, iterations and weight decay.

Every asymptotic relation carries a proportionality constant ``c_prop``
(default 1). Logarithms are natural.
"""
import logging
import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional

from smoothreg.errors import ScheduleError

logger = logging.getLogger(__name__)

MAX_LOG_T = 700.0


class ScheduleRegime(str, Enum):
    POLY = "poly"
    GAUSSIAN = "gaussian"
    TENSOR = "tensor"


@dataclass(frozen=True)
class ScheduleParams:
    regime: ScheduleRegime
    n: int
    sigma_n: float
    nu: float
    m_eps: float
    t_star: int
    alpha_star: float
    lambda_n: float
    beta: float
    t_weight_decay: int
    c_prop: float
    rate_exponent: float
    rate_log_power: float

    def as_row(self) -> dict:
        row = asdict(self)
        row["regime"] = self.regime.value
        return row


def poly_m_eps(n: int, D: int, d: int, m0: float, mf: float) -> float:
    """m_eps = 2 d^-1 (2 D max(m0, mf) + m0 d) log n - m0."""
    return 2.0 / d * (2.0 * D * max(m0, mf) + m0 * d) * math.log(n) - m0


def poly_nu(n: int, D: int, d: int, m0: float, mf: float, m_eps: float, a: Optional[float] = None) -> float:
    """Exponent nu of sigma_n = c n^nu for polynomial smoothing; 0 when D = d.

    Without ``a`` the shrink factor is 1 - 1/log n; with ``a`` it is
    1 - (2 mf + d) a / d, the variant giving rate exponent -2mf/(2mf+d) + a.
    """
    if D == d:
        return 0.0
    shrink = 1.0 - 1.0 / math.log(n) if a is None else 1.0 - (2.0 * mf + d) * a / d
    s = 2.0 * m0 + 2.0 * m_eps
    numerator = 2.0 * s * D - (s - D) * d
    denominator = (2.0 * mf + d) * (4.0 * m_eps * D - (2.0 * m0 + 2.0 * shrink * m_eps - D) * d)
    if denominator <= 0:
        raise ScheduleError(f"smoothing-scale exponent undefined (denominator {denominator:.4g})")
    return -numerator / denominator


def _round_exp(log_value: float, what: str) -> int:
    if log_value > MAX_LOG_T:
        raise ScheduleError(f"{what} = exp({log_value:.1f}) is not representable")
    return max(1, int(round(math.exp(log_value))))


def _weight_decay_iterations(alpha: float, mf: float, d_eff: float, n: int, c2: float) -> int:
    if not 0.0 < alpha < 1.0:
        raise ScheduleError(f"weight decay alpha must lie in (0, 1), got {alpha}")
    return max(1, math.ceil(c2 * (mf / (2.0 * mf + d_eff) + 0.5) * math.log(n) / abs(math.log1p(-alpha))))


def schedule(regime, n: int, D: int, d: int, m0: float, mf: float, c_prop: float = 1.0, *,
             m_eps: Optional[float] = None, a: Optional[float] = None, beta: Optional[float] = None,
             variance: float = 1.0, c2: float = 1.0) -> ScheduleParams:
    """Smoothing scale, stopping time, weight decay and ridge-equivalent penalty.

    Args:
        regime: poly, gaussian or tensor smoothing.
        n: Sample size (>= 2).
        D, d: Ambient and intrinsic dimension, 1 <= d <= D.
        m0: Kernel smoothness (> D/2).
        mf: Target smoothness (> D/2).
        c_prop: Constant in front of every asymptotic relation.
        m_eps: Noise shape. Poly smoothing derives it from n unless given;
            tensor smoothing defaults to max(mf - m0, 1).
        a: Optional rate slack of the poly-smoothing exponent.
        beta: Step size; defaults to 1 / (2 n variance), the largest allowed
            when sup K_S = variance.
        c2: Constant of the weight-decay iteration count.

    Raises:
        ScheduleError: on precondition violations or unrepresentable outputs.
    """
    regime = ScheduleRegime(regime)
    if n < 2:
        raise ScheduleError(f"n must be >= 2, got {n}")
    if not 1 <= d <= D:
        raise ScheduleError(f"need 1 <= d <= D, got d={d}, D={D}")
    if mf <= D / 2:
        raise ScheduleError(f"mf must exceed D/2 = {D / 2}, got {mf}")
    if m0 <= D / 2 and regime is not ScheduleRegime.TENSOR:
        raise ScheduleError(f"m0 must exceed D/2 = {D / 2}, got {m0}")
    if c_prop <= 0:
        raise ScheduleError(f"c_prop must be positive, got {c_prop}")
    beta = beta if beta is not None else 1.0 / (2.0 * n * variance)
    log_n = math.log(n)
    log_c = math.log(c_prop)

    if regime is ScheduleRegime.POLY:
        m_eps = poly_m_eps(n, D, d, m0, mf) if m_eps is None else m_eps
        if m_eps <= D / 2:
            raise ScheduleError(f"poly smoothing needs m_eps > D/2, got {m_eps:.4g} at n={n}")
        nu = poly_nu(n, D, d, m0, mf, m_eps, a)
        sigma = c_prop * n ** nu
        log_sigma = math.log(sigma)
        expo = 2.0 * (m0 + m_eps) / (2.0 * mf + d)
        t_star = _round_exp(log_c + expo * log_n + 2.0 * m_eps * log_sigma, "t*")
        alpha = math.exp(log_c - (1.0 + expo) * log_n - 2.0 * m_eps * log_sigma)
        rate = -2.0 * mf / (2.0 * mf + d) + (a or 0.0)
        log_power = 0.0 if a is not None else 2.0 * mf + 1.0
        d_eff = d
    elif regime is ScheduleRegime.GAUSSIAN:
        nu = -1.0 / (2.0 * mf + d)
        sigma = c_prop * n ** nu
        m_eps = math.inf
        expo = (2.0 * m0 + 2.0 * mf) / (2.0 * mf + d)
        t_star = _round_exp(log_c + expo * log_n, "t*")
        alpha = math.exp(log_c - (1.0 + expo) * log_n)
        rate = -2.0 * mf / (2.0 * mf + d)
        log_power = D + 1.0
        d_eff = d
    else:
        m_eps = max(mf - m0, 1.0) if m_eps is None else m_eps
        if m_eps <= 0.5:
            raise ScheduleError(f"tensor smoothing needs m_eps > 1/2, got {m_eps}")
        if m_eps + m0 < mf:
            raise ScheduleError(f"tensor smoothing needs m_eps + m0 >= mf, got {m_eps} + {m0} < {mf}")
        nu = 0.0
        sigma = c_prop
        s = m0 + m_eps
        log_factor = (2.0 * (D - 1) * s + 1.0) / (2.0 * mf + 1.0) * math.log(log_n) if log_n > 0 else 0.0
        t_star = _round_exp(log_c + 2.0 * s / (2.0 * mf + 1.0) * log_n + log_factor, "t*")
        alpha = math.exp(log_c - (1.0 + 2.0 * s / (2.0 * mf + d)) * log_n + log_factor)
        rate = -2.0 * mf / (2.0 * mf + 1.0)
        log_power = 2.0 * mf / (2.0 * mf + 1.0) * (D - 1 + 1.0 / (2.0 * s))
        d_eff = 1.0

    if not (sigma > 0 and alpha > 0):
        raise ScheduleError(f"non-positive schedule output (sigma={sigma}, alpha={alpha})")
    lambda_n = 1.0 / (beta * t_star) / n
    t_wd = _weight_decay_iterations(alpha, mf, d_eff, n, c2)
    params = ScheduleParams(regime, n, sigma, nu, m_eps, t_star, alpha, lambda_n, beta, t_wd,
                            c_prop, rate, log_power)
    logger.debug(f"schedule {regime.value} n={n}: sigma={sigma:.4g} t*={t_star} alpha={alpha:.4g}")
    return params


def rate_exponent(regime, d: int, mf: float) -> float:
    """Polynomial part of the squared-L2 convergence rate."""
    regime = ScheduleRegime(regime)
    if regime is ScheduleRegime.TENSOR:
        return -2.0 * mf / (2.0 * mf + 1.0)
    return -2.0 * mf / (2.0 * mf + d)
