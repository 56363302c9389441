"""Kernel gradient descent on a smoothed Gram, with early stopping and weight decay.

In the transformed coordinates theta = sqrt(K) w the update is

    theta_{t+1} = theta_t - beta (K theta_t - sqrt(K) y) - alpha theta_t,

so f_t(X) = sqrt(K) theta_t. Every matrix function is taken in the
eigenbasis of K; in that basis mode j of f_t(X) is coef_j(t) (v_j . y) with
coef_j(t) = [1 - (1 - alpha - beta eta_j)^t] beta eta_j / (alpha + beta eta_j).
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import List, Optional, Tuple, Union

import numpy as np

from smoothreg.errors import ConfigError, InequalityViolation, StepSizeError
from smoothreg.smoothing import SmoothedGram

logger = logging.getLogger(__name__)

PINV_THRESHOLD = 1e-12
DEFAULT_T_MAX = 100_000


class GdMode(str, Enum):
    ITERATIVE = "iterative"
    CLOSED_FORM = "closed_form"


@dataclass(frozen=True)
class FixedT:
    t: int

    def __post_init__(self):
        if self.t < 0:
            raise ConfigError(f"iteration count must be >= 0, got {self.t}")


@dataclass(frozen=True)
class ValidationEarlyStop:
    """Check validation loss every ``check_every`` steps; keep the best model.

    ``patience`` counts checks without improvement before stopping; None
    runs to ``t_max``.
    """
    check_every: int = 200
    patience: Optional[int] = None

    def __post_init__(self):
        if self.check_every < 1:
            raise ConfigError(f"check_every must be >= 1, got {self.check_every}")


StopRule = Union[FixedT, ValidationEarlyStop]


@dataclass(frozen=True)
class TrainConfig:
    beta: float
    alpha: float = 0.0
    t_max: int = DEFAULT_T_MAX
    stop_rule: StopRule = field(default_factory=lambda: FixedT(DEFAULT_T_MAX))
    N: int = 1
    mode: GdMode = GdMode.CLOSED_FORM
    record_every: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "mode", GdMode(self.mode))
        if self.beta <= 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")

    def validate(self, gram: SmoothedGram):
        """Require beta * eta_1 + alpha < 1 on this Gram."""
        contraction = self.beta * gram.eta_max + self.alpha
        if contraction >= 1.0:
            raise StepSizeError(
                f"beta*eta_1 + alpha = {contraction:.6g} >= 1 (beta={self.beta}, eta_1={gram.eta_max:.6g})")

    @property
    def t_end(self) -> int:
        if isinstance(self.stop_rule, FixedT):
            return self.stop_rule.t
        return self.t_max

    def to_dict(self) -> dict:
        rule = asdict(self.stop_rule)
        rule["kind"] = type(self.stop_rule).__name__
        return {"beta": self.beta, "alpha": self.alpha, "t_max": self.t_max, "stop_rule": rule,
                "N": self.N, "mode": self.mode.value, "record_every": self.record_every}

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        rule = dict(data.pop("stop_rule"))
        kind = rule.pop("kind")
        data["stop_rule"] = FixedT(**rule) if kind == "FixedT" else ValidationEarlyStop(**rule)
        return cls(**data)


@dataclass
class FitResult:
    w: np.ndarray
    theta: np.ndarray
    t_used: int
    loss_trajectory: List[float]
    fitted_values: np.ndarray
    trajectory_steps: List[int] = field(default_factory=list)
    val_trajectory: List[Tuple[int, float]] = field(default_factory=list)
    config: Optional[TrainConfig] = None


# --- eigenbasis helpers ---

def _clamped(gram: SmoothedGram) -> np.ndarray:
    return np.clip(gram.eigenvalues, 0.0, None)


def _pinv_weights(eta: np.ndarray) -> np.ndarray:
    keep = eta > PINV_THRESHOLD * eta[0]
    inv = np.zeros_like(eta)
    inv[keep] = 1.0 / eta[keep]
    return inv


def gd_coefficients(eta, beta: float, alpha: float, t: int) -> np.ndarray:
    """Per-mode shrinkage coef_j(t) of the gradient-descent fit."""
    eta = np.asarray(eta, dtype=float)
    decay = np.power(1.0 - alpha - beta * eta, t)
    if alpha == 0.0:
        return 1.0 - decay
    return (1.0 - decay) * beta * eta / (alpha + beta * eta)


def _loss(y: np.ndarray, fitted: np.ndarray) -> float:
    return float(np.sum((y - fitted) ** 2) / (2.0 * len(y)))


def _record_steps(t_end: int, record_every: Optional[int]) -> np.ndarray:
    every = record_every or max(1, t_end // 1000)
    steps = np.arange(0, t_end + 1, every)
    if steps[-1] != t_end:
        steps = np.append(steps, t_end)
    return steps


def _warn_rank(gram: SmoothedGram):
    if gram.eta_min < PINV_THRESHOLD * gram.eta_max:
        logger.warning(f"Smoothed Gram is numerically singular (eta_n={gram.eta_min:.3e}, "
                       f"eta_1={gram.eta_max:.3e}); weights use a thresholded pseudo-inverse")


def _result_from_modes(gram: SmoothedGram, coef_proj: np.ndarray, t: int, **extra) -> FitResult:
    """Build FitResult from the eigen-coordinates of f_t(X)."""
    eta = _clamped(gram)
    V = gram.eigenvectors
    fitted = V @ coef_proj
    w = V @ (_pinv_weights(eta) * coef_proj)
    theta = V @ (np.sqrt(eta) * (V.T @ w))
    return FitResult(w=w, theta=theta, t_used=int(t), fitted_values=fitted, **extra)


def _validation_loss(cross: np.ndarray, w: np.ndarray, y_val: np.ndarray) -> float:
    return float(np.mean((cross @ w - y_val) ** 2))


# --- fitting ---

def gd_fit(gram: SmoothedGram, y, cfg: TrainConfig,
           validation: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> FitResult:
    """Run kernel gradient descent from theta_0 = w_0 = 0.

    Args:
        gram: Smoothed Gram of the training points.
        y: Training responses.
        cfg: Step size, weight decay, stop rule and mode.
        validation: (X_val, y_val), required for ValidationEarlyStop.

    Raises:
        StepSizeError: if beta * eta_1 + alpha >= 1.
    """
    y = np.asarray(y, dtype=float)
    cfg.validate(gram)
    _warn_rank(gram)
    early = isinstance(cfg.stop_rule, ValidationEarlyStop)
    cross = None
    if early:
        if validation is None:
            raise ConfigError("validation early stopping needs a validation set")
        cross = gram.cross_kernel(validation[0])
    if cfg.mode is GdMode.CLOSED_FORM:
        result = _fit_closed_form(gram, y, cfg, cross, validation)
    else:
        result = _fit_iterative(gram, y, cfg, cross, validation)
    result.config = cfg
    logger.debug(f"gd_fit mode={cfg.mode.value} t_used={result.t_used} "
                 f"final_loss={result.loss_trajectory[-1] if result.loss_trajectory else float('nan'):.4e}")
    return result


def _fit_closed_form(gram, y, cfg, cross, validation) -> FitResult:
    eta = _clamped(gram)
    proj = gram.eigenvectors.T @ y
    steps = _record_steps(cfg.t_end, cfg.record_every)
    losses = []
    for lo in range(0, len(steps), 256):
        chunk = steps[lo:lo + 256]
        decay = np.power((1.0 - cfg.alpha - cfg.beta * eta)[None, :], chunk[:, None])
        coef = 1.0 - decay if cfg.alpha == 0.0 else \
            (1.0 - decay) * cfg.beta * eta / (cfg.alpha + cfg.beta * eta)
        losses.extend((np.sum(((1.0 - coef) * proj) ** 2, axis=1) / (2.0 * len(y))).tolist())

    if not isinstance(cfg.stop_rule, ValidationEarlyStop):
        t = cfg.t_end
        return _result_from_modes(gram, gd_coefficients(eta, cfg.beta, cfg.alpha, t) * proj, t,
                                  loss_trajectory=losses, trajectory_steps=steps.tolist())

    rule = cfg.stop_rule
    V = gram.eigenvectors
    inv = _pinv_weights(eta)
    best_t, best_val, since_best = 0, _validation_loss(cross, np.zeros(len(y)), validation[1]), 0
    val_traj = [(0, best_val)]
    for t in range(rule.check_every, cfg.t_max + 1, rule.check_every):
        w = V @ (inv * gd_coefficients(eta, cfg.beta, cfg.alpha, t) * proj)
        val = _validation_loss(cross, w, validation[1])
        val_traj.append((t, val))
        if val < best_val:
            best_t, best_val, since_best = t, val, 0
        else:
            since_best += 1
            if rule.patience is not None and since_best >= rule.patience:
                break
    result = _result_from_modes(gram, gd_coefficients(eta, cfg.beta, cfg.alpha, best_t) * proj, best_t,
                                loss_trajectory=losses, trajectory_steps=steps.tolist(),
                                val_trajectory=val_traj)
    return result


def _fit_iterative(gram, y, cfg, cross, validation) -> FitResult:
    eta = _clamped(gram)
    V = gram.eigenvectors
    K = (V * eta) @ V.T
    sqrt_k = (V * np.sqrt(eta)) @ V.T
    inv_sqrt = (V * np.sqrt(_pinv_weights(eta))) @ V.T
    drive = cfg.beta * (sqrt_k @ y)
    theta = np.zeros(len(y))
    record = set(_record_steps(cfg.t_end, cfg.record_every).tolist())
    losses, steps, val_traj = [], [], []
    early = isinstance(cfg.stop_rule, ValidationEarlyStop)
    best = (0, theta.copy())
    best_val = _validation_loss(cross, np.zeros(len(y)), validation[1]) if early else math.inf
    if early:
        val_traj.append((0, best_val))
    since_best = 0
    t = 0
    while True:
        if t in record:
            steps.append(t)
            losses.append(_loss(y, sqrt_k @ theta))
        if t >= cfg.t_end:
            break
        theta = theta - cfg.beta * (K @ theta) + drive - cfg.alpha * theta
        t += 1
        if early and t % cfg.stop_rule.check_every == 0:
            val = _validation_loss(cross, inv_sqrt @ theta, validation[1])
            val_traj.append((t, val))
            if val < best_val:
                best, best_val, since_best = (t, theta.copy()), val, 0
            else:
                since_best += 1
                if cfg.stop_rule.patience is not None and since_best >= cfg.stop_rule.patience:
                    steps.append(t)
                    losses.append(_loss(y, sqrt_k @ theta))
                    break
    if early:
        t, theta = best
    fitted = sqrt_k @ theta
    w = inv_sqrt @ theta
    return FitResult(w=w, theta=theta, t_used=t, loss_trajectory=losses, fitted_values=fitted,
                     trajectory_steps=steps, val_trajectory=val_traj)


def predict_many(gram: SmoothedGram, fit: FitResult, X_new) -> np.ndarray:
    """f_t(x) = sum_j w_j K_S(x - x_j) at each query point."""
    return gram.cross_kernel(X_new) @ fit.w


def predict(gram: SmoothedGram, fit: FitResult, x_new) -> float:
    return float(predict_many(gram, fit, np.atleast_1d(np.asarray(x_new, dtype=float)))[0])


def krr_fit(gram: SmoothedGram, y, lam: float) -> FitResult:
    """Kernel ridge regression: w = (K + n lam I)^-1 y, fitted = K w."""
    if lam <= 0:
        raise ConfigError(f"lambda must be positive, got {lam}")
    y = np.asarray(y, dtype=float)
    n = len(y)
    eta = _clamped(gram)
    V = gram.eigenvectors
    proj = V.T @ y
    denom = eta + n * lam
    fitted = V @ (eta / denom * proj)
    w = V @ (proj / denom)
    theta = V @ (np.sqrt(eta) * (V.T @ w))
    return FitResult(w=w, theta=theta, t_used=0, loss_trajectory=[_loss(y, fitted)], fitted_values=fitted)


def expected_gd_fitted(gram_tilde: SmoothedGram, y, beta: float, alpha: float, t: int) -> np.ndarray:
    """g_t(X): the same closed form run on the expected-kernel Gram."""
    eta = _clamped(gram_tilde)
    proj = gram_tilde.eigenvectors.T @ np.asarray(y, dtype=float)
    return gram_tilde.eigenvectors @ (gd_coefficients(eta, beta, alpha, t) * proj)


@dataclass(frozen=True)
class ErrorDecomposition:
    total: float
    augmentation: float
    expected: float

    @property
    def triangle_holds(self) -> bool:
        return self.total <= self.augmentation + self.expected + 1e-12 * max(1.0, self.total)


def error_decomposition(fitted, expected_fitted, f_star) -> ErrorDecomposition:
    """|f_t - f*| against |f_t - g_t| + |g_t - f*| in the empirical norm."""
    def norm(v):
        return float(np.sqrt(np.mean(np.asarray(v, dtype=float) ** 2)))
    fitted, expected_fitted, f_star = map(np.asarray, (fitted, expected_fitted, f_star))
    return ErrorDecomposition(norm(fitted - f_star), norm(fitted - expected_fitted), norm(expected_fitted - f_star))


# --- comparison with kernel ridge regression ---

@dataclass
class AuditReport:
    checked: int
    violations: int
    max_slack_i: float
    max_slack_ii: float
    rkhs_gd: float = float("nan")
    rkhs_krr: float = float("nan")
    rkhs_ok: bool = True
    messages: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.rkhs_ok


def _scalar_bounds(eta: np.ndarray, beta: float, t: np.ndarray):
    """Both sides of the two per-eigenvalue inequalities, broadcast over eta and t."""
    inv = 1.0 / (beta * t)
    with np.errstate(divide="ignore"):
        log_decay = t * np.log1p(-beta * eta)
    lhs_i = np.exp(2.0 * log_decay)
    rhs_i = 2.0 * math.e * (inv / (inv + eta)) ** 2
    lhs_ii = (-np.expm1(log_decay)) ** 2
    rhs_ii = 4.0 * (beta * t * eta / (1.0 + beta * t * eta)) ** 2
    return lhs_i, rhs_i, lhs_ii, rhs_ii


def _tally(lhs_i, rhs_i, lhs_ii, rhs_ii) -> Tuple[int, float, float]:
    tol_i = 1e-12 * np.maximum(1.0, rhs_i)
    tol_ii = 1e-12 * np.maximum(1.0, rhs_ii)
    bad = (lhs_i > rhs_i + tol_i) | (lhs_ii > rhs_ii + tol_ii)
    return int(bad.sum()), float(np.max(lhs_i - rhs_i)), float(np.max(lhs_ii - rhs_ii))


def audit_scalar_sweep(eta_grid, t_grid, beta: float, raise_on_violation: bool = True) -> AuditReport:
    """Check both scalar inequalities on every (eta, t) pair; requires beta * max(eta) <= 1."""
    eta = np.asarray(eta_grid, dtype=float)[:, None]
    t = np.asarray(t_grid, dtype=float)[None, :]
    if beta * eta.max() > 1.0:
        raise StepSizeError(f"beta*eta must be <= 1, got {beta * eta.max():.6g}")
    violations, slack_i, slack_ii = _tally(*_scalar_bounds(eta, beta, t))
    report = AuditReport(eta.size * t.size, violations, slack_i, slack_ii)
    if violations and raise_on_violation:
        raise InequalityViolation(f"{violations} scalar comparison inequality violation(s)")
    return report


def comparison_audit(gram: SmoothedGram, y, beta: float, t: int, raise_on_violation: bool = True) -> AuditReport:
    """Per-eigenvalue comparison of early-stopped GD with KRR at n lam = (beta t)^-1.

    Checks (1 - beta eta)^(2t) <= 2e ((beta t)^-1 / ((beta t)^-1 + eta))^2,
    (1 - (1 - beta eta)^t)^2 <= 4 (beta t eta / (1 + beta t eta))^2, and the
    RKHS norms |g_t|^2 <= 4 |g~|^2.
    """
    if beta * gram.eta_max >= 1.0 + 1e-15:
        raise StepSizeError(f"comparison audit needs beta*eta_1 <= 1, got {beta * gram.eta_max:.6g}")
    if t < 1:
        raise ConfigError("comparison audit needs t >= 1")
    y = np.asarray(y, dtype=float)
    eta = _clamped(gram)
    lhs_i, rhs_i, lhs_ii, rhs_ii = _scalar_bounds(eta, beta, np.float64(t))
    violations, slack_i, slack_ii = _tally(lhs_i, rhs_i, lhs_ii, rhs_ii)

    proj2 = (gram.eigenvectors.T @ y) ** 2
    n_lam = 1.0 / (beta * t)
    keep = eta > PINV_THRESHOLD * max(eta[0], 1e-300)
    with np.errstate(divide="ignore"):
        coef = -np.expm1(t * np.log1p(-beta * eta[keep]))
    rkhs_gd = float(np.sum(coef ** 2 / eta[keep] * proj2[keep]))
    rkhs_krr = float(np.sum(eta[keep] / (eta[keep] + n_lam) ** 2 * proj2[keep]))
    rkhs_ok = rkhs_gd <= 4.0 * rkhs_krr * (1.0 + 1e-12) + 1e-300

    report = AuditReport(len(eta), violations, slack_i, slack_ii, rkhs_gd, rkhs_krr, rkhs_ok)
    if not rkhs_ok:
        report.messages.append(f"RKHS norm {rkhs_gd:.6e} exceeds 4 x {rkhs_krr:.6e}")
    if violations:
        report.messages.append(f"{violations} per-eigenvalue violation(s)")
    if not report.passed and raise_on_violation:
        raise InequalityViolation("; ".join(report.messages))
    return report


@dataclass(frozen=True)
class RiskComparison:
    """Expected empirical risk E|h - f*|_n^2 of early-stopped GD and KRR."""
    gd_bias: float
    gd_variance: float
    krr_bias: float
    krr_variance: float

    @property
    def gd_risk(self) -> float:
        return self.gd_bias + self.gd_variance

    @property
    def krr_risk(self) -> float:
        return self.krr_bias + self.krr_variance

    @property
    def bound_holds(self) -> bool:
        return self.gd_risk <= 2.0 * math.e * self.krr_risk * (1.0 + 1e-12)


def risk_comparison(gram: SmoothedGram, f_star_X, noise_var: float, beta: float, t: int) -> RiskComparison:
    """Bias and variance of both estimators for y = f*(X) + noise with the given variance."""
    eta = _clamped(gram)
    n = gram.n
    proj2 = (gram.eigenvectors.T @ np.asarray(f_star_X, dtype=float)) ** 2
    coef = gd_coefficients(eta, beta, 0.0, t)
    shrink = eta / (eta + 1.0 / (beta * t))
    return RiskComparison(
        gd_bias=float(np.sum((1.0 - coef) ** 2 * proj2) / n),
        gd_variance=float(noise_var * np.sum(coef ** 2) / n),
        krr_bias=float(np.sum((1.0 - shrink) ** 2 * proj2) / n),
        krr_variance=float(noise_var * np.sum(shrink ** 2) / n),
    )


# --- augmented losses ---

def evaluate_augmented(h, points, noise) -> np.ndarray:
    """h(x_j + eps_k) as an (n, N) array; ``h`` maps an (M, D) array to M values.

    ``noise`` is a shared (N, D) list or per-point (n, N, D) draws.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    n, D = points.shape
    noise = np.asarray(noise, dtype=float)
    if noise.ndim == 3:
        aug = points[:, None, :] + noise
    else:
        aug = points[:, None, :] + noise.reshape(-1, D)[None, :, :]
    N = aug.shape[1]
    return np.asarray(h(aug.reshape(-1, D)), dtype=float).reshape(n, N)


GAP_RTOL = 1e-9


def augmented_loss(gram_or_points, y, h_values, noise=None) -> Tuple[float, float, float]:
    """Averaged-predictor loss L_n, per-augmentation loss L'_n and their gap.

    L_n = (1/2n) sum_j (y_j - mean_k h_jk)^2 and L'_n = (1/2n) sum_j mean_k (y_j - h_jk)^2.
    The gap (1/2n) sum_j (1/2N^2) sum_{k,l} (h_jk - h_jl)^2 is the per-point
    variance over augmentations, computed in O(nN) and checked against L'_n - L_n.

    ``h_values`` is either the (n, N) array h(x_j + eps_k) or a callable h,
    evaluated at the design points of ``gram_or_points``: a SmoothedGram
    (its stored noise) or an (n, D) array together with ``noise``.

    Raises:
        InequalityViolation: if the gap and L'_n - L_n disagree.
    """
    if isinstance(gram_or_points, SmoothedGram):
        points = gram_or_points.points
        noise = gram_or_points.noise_used if noise is None else noise
    else:
        points = np.asarray(gram_or_points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
    y = np.asarray(y, dtype=float)
    if len(y) != len(points):
        raise ConfigError(f"y has {len(y)} entries for {len(points)} points")
    if callable(h_values):
        if noise is None:
            raise ConfigError("evaluating h needs the augmentation noise")
        h = evaluate_augmented(h_values, points, noise)
    else:
        h = np.asarray(h_values, dtype=float).reshape(len(y), -1)
    n = len(y)
    loss_avg = float(np.sum((y - h.mean(axis=1)) ** 2) / (2.0 * n))
    loss_aug = float(np.sum(np.mean((y[:, None] - h) ** 2, axis=1)) / (2.0 * n))
    # shifting by the first draw keeps constant rows exactly zero
    gap = float(np.sum(np.var(h - h[:, :1], axis=1)) / (2.0 * n))
    if not math.isclose(loss_aug - loss_avg, gap, rel_tol=GAP_RTOL, abs_tol=GAP_RTOL * loss_aug):
        raise InequalityViolation(f"augmentation gap {gap:.12e} differs from L'_n - L_n = "
                                  f"{loss_aug - loss_avg:.12e}")
    return loss_avg, loss_aug, gap
