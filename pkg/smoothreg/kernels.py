"""Stationary positive-definite kernels with evaluable spectral densities.

Families: Matérn (theory parameterisation m0, phi), generalized Wendland
(compact support), Gaussian, and tensor products of univariate kernels.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy import special
from scipy.spatial.distance import cdist

from smoothreg.errors import ConfigError, UnsupportedFamilyError
from smoothreg.special_math import gamma_fn, log_bessel_k, log_beta, log_gamma

logger = logging.getLogger(__name__)

# Below this distance the Matérn formula is 0 * inf; return the variance.
R_ORIGIN = 1e-12
WENDLAND_NODES = 64


class KernelFamily(str, Enum):
    MATERN = "matern"
    WENDLAND = "wendland"
    GAUSSIAN = "gaussian"
    TENSOR = "tensor"


@dataclass(frozen=True)
class KernelSpec:
    """Immutable description of a stationary kernel on R^dim.

    Matérn uses the theory parameterisation: order nu = m0 - dim/2 and rate
    a = 2 phi sqrt(nu). The classical (nu, rho) form maps onto it through
    ``KernelSpec.matern_classical`` with phi = 1 / (sqrt(2) rho).

    Gaussian is k(x) = variance * exp(-|x|^2 / (4 scale^2)).
    """
    family: KernelFamily
    dim: int
    m0: float = 0.0
    phi: float = 1.0
    kappa: float = 0.0
    mu: float = 0.0
    scale: float = 1.0
    variance: float = 1.0
    factors: Tuple["KernelSpec", ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        if self.dim < 1:
            raise ConfigError(f"ambient dimension must be >= 1, got {self.dim}")
        if self.variance <= 0:
            raise ConfigError(f"variance must be positive, got {self.variance}")
        if self.family is KernelFamily.MATERN:
            if self.m0 <= self.dim / 2:
                raise ConfigError(f"Matérn requires m0 > D/2 = {self.dim / 2}, got {self.m0}")
            if self.phi <= 0:
                raise ConfigError(f"phi must be positive, got {self.phi}")
        elif self.family is KernelFamily.WENDLAND:
            if self.kappa <= 0:
                raise ConfigError(f"Wendland requires kappa > 0, got {self.kappa}")
            if self.mu < (self.dim + 1) / 2 + self.kappa:
                raise ConfigError(
                    f"Wendland requires mu >= (D+1)/2 + kappa = {(self.dim + 1) / 2 + self.kappa}, got {self.mu}")
            if self.phi <= 0:
                raise ConfigError(f"phi must be positive, got {self.phi}")
            object.__setattr__(self, "m0", (self.dim + 1) / 2 + self.kappa)
        elif self.family is KernelFamily.GAUSSIAN:
            if self.scale <= 0:
                raise ConfigError(f"Gaussian scale must be positive, got {self.scale}")
        elif self.family is KernelFamily.TENSOR:
            factors = tuple(self.factors)
            if len(factors) != self.dim:
                raise ConfigError(f"tensor kernel needs exactly {self.dim} factors, got {len(factors)}")
            for f in factors:
                if f.dim != 1 or f.family is KernelFamily.TENSOR:
                    raise ConfigError("tensor factors must be univariate non-tensor kernels")
                if f.m0 <= 0.5 and f.family is not KernelFamily.GAUSSIAN:
                    raise ConfigError(f"tensor factor smoothness must exceed 1/2, got {f.m0}")
            object.__setattr__(self, "factors", factors)
            finite = [f.m0 for f in factors if f.family is not KernelFamily.GAUSSIAN]
            object.__setattr__(self, "m0", max(finite) if finite else math.inf)
        if self.family is not KernelFamily.TENSOR and self.factors:
            raise ConfigError("only tensor kernels carry factors")

    # --- constructors ---

    @classmethod
    def matern(cls, m0: float, phi: float = 1.0, dim: int = 1, variance: float = 1.0) -> "KernelSpec":
        return cls(KernelFamily.MATERN, dim, m0=m0, phi=phi, variance=variance)

    @classmethod
    def matern_classical(cls, nu: float, rho: float = 1.0, dim: int = 1,
                         variance: float = 1.0) -> "KernelSpec":
        """Matérn with smoothness nu and lengthscale rho (sqrt(2 nu) r / rho form)."""
        if nu <= 0 or rho <= 0:
            raise ConfigError(f"nu and rho must be positive, got nu={nu}, rho={rho}")
        return cls.matern(nu + dim / 2, 1.0 / (math.sqrt(2.0) * rho), dim, variance)

    @classmethod
    def wendland(cls, kappa: float, mu: float, phi: float = 1.0, dim: int = 1,
                 variance: float = 1.0) -> "KernelSpec":
        return cls(KernelFamily.WENDLAND, dim, kappa=kappa, mu=mu, phi=phi, variance=variance)

    @classmethod
    def gaussian(cls, scale: float, dim: int = 1, variance: float = 1.0) -> "KernelSpec":
        return cls(KernelFamily.GAUSSIAN, dim, scale=scale, variance=variance)

    @classmethod
    def tensor(cls, factors) -> "KernelSpec":
        factors = tuple(factors)
        return cls(KernelFamily.TENSOR, len(factors), factors=factors,
                   variance=float(np.prod([f.variance for f in factors])))

    # --- derived quantities ---

    @property
    def nu(self) -> float:
        """Matérn order m0 - D/2."""
        return self.m0 - self.dim / 2

    @property
    def rate(self) -> float:
        """Matérn rate a = 2 phi sqrt(nu)."""
        return 2.0 * self.phi * math.sqrt(self.nu)

    @property
    def has_spectral_density(self) -> bool:
        if self.family is KernelFamily.TENSOR:
            return all(f.has_spectral_density for f in self.factors)
        return self.family in (KernelFamily.MATERN, KernelFamily.GAUSSIAN)

    @property
    def half_integer_order(self) -> Optional[int]:
        """p if this is a Matérn with order nu = p + 1/2, else None."""
        if self.family is not KernelFamily.MATERN:
            return None
        p = self.nu - 0.5
        if p >= 0 and abs(p - round(p)) < 1e-12:
            return int(round(p))
        return None

    # --- serialization ---

    def to_dict(self) -> dict:
        if self.family is KernelFamily.TENSOR:
            return {"family": self.family.value, "factors": [f.to_dict() for f in self.factors]}
        out = {"family": self.family.value, "dim": self.dim, "variance": self.variance}
        if self.family is KernelFamily.MATERN:
            out.update(m0=self.m0, phi=self.phi)
        elif self.family is KernelFamily.WENDLAND:
            out.update(kappa=self.kappa, mu=self.mu, phi=self.phi)
        else:
            out.update(scale=self.scale)
        return out

    @classmethod
    def from_dict(cls, data: dict, dim: Optional[int] = None) -> "KernelSpec":
        data = dict(data)
        family = KernelFamily(data.pop("family"))
        if family is KernelFamily.TENSOR:
            return cls.tensor([cls.from_dict(f, dim=1) for f in data["factors"]])
        if dim is not None:
            data.setdefault("dim", dim)
        if family is KernelFamily.MATERN and "nu" in data:
            return cls.matern_classical(data["nu"], data.get("rho", 1.0), data.get("dim", 1),
                                        data.get("variance", 1.0))
        return cls(family, **data)


# --- radial profiles ---

@lru_cache(maxsize=None)
def _matern_half_integer_coefficients(p: int) -> Tuple[float, ...]:
    """c_l with K(z) = e^{-z} sum_l c_l z^l for order p + 1/2 (unit variance)."""
    lead = math.factorial(p) / math.factorial(2 * p)
    return tuple(
        lead * math.factorial(2 * p - l) / (math.factorial(p - l) * math.factorial(l)) * 2.0 ** l
        for l in range(p + 1)
    )


def _matern_radial(spec: KernelSpec, r: np.ndarray) -> np.ndarray:
    out = np.full(r.shape, spec.variance, dtype=float)
    mask = r >= R_ORIGIN
    if not np.any(mask):
        return out
    z = spec.rate * r[mask]
    p = spec.half_integer_order
    if p is not None:
        poly = np.polynomial.polynomial.polyval(z, _matern_half_integer_coefficients(p))
        out[mask] = spec.variance * np.exp(-z) * poly
    else:
        nu = spec.nu
        log_val = nu * np.log(z) + log_bessel_k(nu, z) - log_gamma(nu) - (nu - 1.0) * math.log(2.0)
        out[mask] = spec.variance * np.exp(log_val)
    return out


@lru_cache(maxsize=None)
def _wendland_rule(kappa: float, mu: float):
    # Weight (1 - t)^mu (1 + t)^(kappa - 1) on [-1, 1].
    return special.roots_jacobi(WENDLAND_NODES, mu, kappa - 1.0)


def _wendland_radial(spec: KernelSpec, r: np.ndarray) -> np.ndarray:
    """Generalized Wendland profile via Gauss–Jacobi quadrature.

    With s = u^2 - rr^2 and rr = phi r the defining integral becomes
    (1/2) int_0^L s^(kappa-1) (L - s)^mu (1 + sqrt(s + rr^2))^(-mu) ds,
    L = 1 - rr^2, whose remaining factor is smooth on [0, L].
    """
    out = np.zeros(r.shape, dtype=float)
    rr = spec.phi * r
    inside = rr < 1.0
    if not np.any(inside):
        return out
    rr = rr[inside]
    nodes, weights = _wendland_rule(spec.kappa, spec.mu)
    length = 1.0 - rr ** 2
    s = length[:, None] * (1.0 + nodes[None, :]) / 2.0
    smooth = (1.0 + np.sqrt(s + rr[:, None] ** 2)) ** (-spec.mu)
    log_scale = (spec.kappa + spec.mu) * np.log(length / 2.0) - math.log(2.0) \
        - log_beta(2.0 * spec.kappa, spec.mu + 1.0)
    out[inside] = spec.variance * np.exp(log_scale) * (smooth @ weights)
    out[inside & (r < R_ORIGIN)] = spec.variance
    return out


def _gaussian_radial(spec: KernelSpec, r: np.ndarray) -> np.ndarray:
    return spec.variance * np.exp(-r ** 2 / (4.0 * spec.scale ** 2))


_RADIAL = {
    KernelFamily.MATERN: _matern_radial,
    KernelFamily.WENDLAND: _wendland_radial,
    KernelFamily.GAUSSIAN: _gaussian_radial,
}


def radial_values(spec: KernelSpec, r) -> np.ndarray:
    """K as a function of the Euclidean distance, for isotropic families."""
    if spec.family is KernelFamily.TENSOR:
        raise UnsupportedFamilyError("tensor kernels are not radial")
    r = np.abs(np.asarray(r, dtype=float))
    return _RADIAL[spec.family](spec, r)


def kernel_values(spec: KernelSpec, diffs) -> np.ndarray:
    """K(d) for every row d of an (M, D) array of differences."""
    diffs = np.asarray(diffs, dtype=float).reshape(-1, spec.dim)
    if spec.family is KernelFamily.TENSOR:
        out = np.ones(len(diffs))
        for j, factor in enumerate(spec.factors):
            out *= radial_values(factor, diffs[:, j])
        return out
    return radial_values(spec, np.sqrt(np.einsum("ij,ij->i", diffs, diffs)))


def kernel_eval(spec: KernelSpec, diff) -> float:
    """K(diff) for a single D-vector; exactly ``variance`` at the origin."""
    return float(kernel_values(spec, np.atleast_1d(np.asarray(diff, dtype=float)))[0])


def gram_matrix(spec: KernelSpec, X, Y=None) -> np.ndarray:
    """Cross-covariance matrix (K(x_i - y_j))_ij."""
    X = np.asarray(X, dtype=float).reshape(-1, spec.dim)
    Y = X if Y is None else np.asarray(Y, dtype=float).reshape(-1, spec.dim)
    if spec.family is KernelFamily.TENSOR:
        out = np.ones((len(X), len(Y)))
        for j, factor in enumerate(spec.factors):
            out *= radial_values(factor, np.abs(X[:, j:j + 1] - Y[None, :, j]))
        return out
    dist = cdist(X, Y)
    return radial_values(spec, dist.ravel()).reshape(dist.shape)


# --- spectral densities ---

def _spectral_radial(spec: KernelSpec, w2: np.ndarray) -> np.ndarray:
    D = spec.dim
    if spec.family is KernelFamily.MATERN:
        nu = spec.nu
        a2 = spec.rate ** 2
        log_const = log_gamma(spec.m0) - log_gamma(nu) - (D / 2) * math.log(math.pi) + nu * math.log(a2)
        return spec.variance * np.exp(log_const - spec.m0 * np.log(a2 + w2))
    if spec.family is KernelFamily.GAUSSIAN:
        s = spec.scale
        return spec.variance * (s / math.sqrt(math.pi)) ** D * np.exp(-s ** 2 * w2)
    raise UnsupportedFamilyError(f"no closed-form spectral density for {spec.family.value} kernels")


def spectral_values(spec: KernelSpec, omegas) -> np.ndarray:
    """Spectral density S(omega) = (2 pi)^-D int K(x) e^{-i omega.x} dx per row.

    Normalised so that the integral of S over R^D equals K(0).
    """
    omegas = np.asarray(omegas, dtype=float).reshape(-1, spec.dim)
    if spec.family is KernelFamily.TENSOR:
        out = np.ones(len(omegas))
        for j, factor in enumerate(spec.factors):
            out *= _spectral_radial(factor, omegas[:, j] ** 2)
        return out
    return _spectral_radial(spec, np.einsum("ij,ij->i", omegas, omegas))


def spectral_density(spec: KernelSpec, omega) -> float:
    """Closed-form spectral density at one frequency.

    Raises:
        UnsupportedFamilyError: for Wendland kernels (or tensors containing one).
    """
    return float(spectral_values(spec, np.atleast_1d(np.asarray(omega, dtype=float)))[0])


def sobolev_sandwich(spec: KernelSpec, radii) -> Tuple[float, float]:
    """inf and sup of S(omega) (1 + |omega|^2)^m0 over the given frequency radii.

    For Matérn both are finite and positive, which is the polynomial-decay
    condition the smoothing theory relies on.
    """
    if spec.family is not KernelFamily.MATERN:
        raise UnsupportedFamilyError("sandwich constants are defined for Matérn kernels")
    radii = np.asarray(radii, dtype=float)
    omegas = np.zeros((len(radii), spec.dim))
    omegas[:, 0] = radii
    ratio = spectral_values(spec, omegas) * (1.0 + radii ** 2) ** spec.m0
    return float(ratio.min()), float(ratio.max())


def matern_spectral_at_origin(spec: KernelSpec) -> float:
    """pi^(-D/2) Gamma(m0) / Gamma(m0 - D/2) (4 phi^2 nu)^(-D/2), times the variance."""
    nu = spec.nu
    return spec.variance * math.pi ** (-spec.dim / 2) * gamma_fn(spec.m0) / gamma_fn(nu) \
        * (4.0 * spec.phi ** 2 * nu) ** (-spec.dim / 2)
