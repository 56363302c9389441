"""Augmentation-noise laws: samplers and characteristic functions."""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from smoothreg.errors import ConfigError

logger = logging.getLogger(__name__)


class NoiseLaw(str, Enum):
    GAUSSIAN = "gaussian"
    GENERALIZED_LAPLACE = "generalized_laplace"
    TENSOR_GENERALIZED_LAPLACE = "tensor_generalized_laplace"
    NONE = "none"


# One-letter codes used in result tables.
TYPE_CODES = {
    NoiseLaw.GAUSSIAN: "G",
    NoiseLaw.GENERALIZED_LAPLACE: "L",
    NoiseLaw.TENSOR_GENERALIZED_LAPLACE: "L",
    NoiseLaw.NONE: "N",
}


@dataclass(frozen=True)
class NoiseSpec:
    """Law of the i.i.d. augmentation noise eps_k in R^dim.

    ``sigma_n`` is the smoothing scale and ``m_eps`` the generalized-Laplace
    shape. sigma_n = 0 and law NONE both mean no smoothing.
    """
    law: NoiseLaw
    sigma_n: float = 0.0
    m_eps: float = 1.0
    dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "law", NoiseLaw(self.law))
        if self.dim < 1:
            raise ConfigError(f"ambient dimension must be >= 1, got {self.dim}")
        if not self.sigma_n >= 0:
            raise ConfigError(f"sigma_n must be >= 0, got {self.sigma_n}")
        if self.law is NoiseLaw.GENERALIZED_LAPLACE and self.m_eps <= self.dim / 2:
            raise ConfigError(f"generalized Laplace needs m_eps > D/2 = {self.dim / 2}, got {self.m_eps}")
        if self.law is NoiseLaw.TENSOR_GENERALIZED_LAPLACE and self.m_eps <= 0.5:
            raise ConfigError(f"tensor generalized Laplace needs m_eps > 1/2, got {self.m_eps}")

    @classmethod
    def none(cls, dim: int = 1) -> "NoiseSpec":
        return cls(NoiseLaw.NONE, 0.0, dim=dim)

    @classmethod
    def gaussian(cls, sigma_n: float, dim: int = 1) -> "NoiseSpec":
        return cls(NoiseLaw.GAUSSIAN, sigma_n, dim=dim)

    @classmethod
    def generalized_laplace(cls, sigma_n: float, m_eps: float, dim: int = 1) -> "NoiseSpec":
        return cls(NoiseLaw.GENERALIZED_LAPLACE, sigma_n, m_eps, dim)

    @classmethod
    def tensor_laplace(cls, sigma_n: float, m_eps: float, dim: int = 1) -> "NoiseSpec":
        return cls(NoiseLaw.TENSOR_GENERALIZED_LAPLACE, sigma_n, m_eps, dim)

    @classmethod
    def laplace(cls, b: float, dim: int = 1) -> "NoiseSpec":
        """Classical Laplace(0, b) in every coordinate.

        Its characteristic function 1 / (1 + b^2 w^2) is the tensor
        generalized Laplace with m_eps = 1 and sigma_n = sqrt(2) b.
        """
        return cls.tensor_laplace(math.sqrt(2.0) * b, 1.0, dim)

    @property
    def is_null(self) -> bool:
        return self.law is NoiseLaw.NONE or self.sigma_n == 0.0

    @property
    def is_product_form(self) -> bool:
        """True when the law factorizes over coordinates."""
        return self.is_null or self.law in (NoiseLaw.GAUSSIAN, NoiseLaw.TENSOR_GENERALIZED_LAPLACE) \
            or self.dim == 1

    @property
    def type_code(self) -> str:
        return "N" if self.is_null else TYPE_CODES[self.law]

    def marginal(self) -> "NoiseSpec":
        """The univariate law of one coordinate of a product-form spec."""
        if not self.is_product_form:
            raise ConfigError(f"{self.law.value} noise in D={self.dim} does not factorize")
        law = self.law
        if law is NoiseLaw.TENSOR_GENERALIZED_LAPLACE:
            law = NoiseLaw.GENERALIZED_LAPLACE
        return NoiseSpec(law, self.sigma_n, self.m_eps, 1)

    def to_dict(self) -> dict:
        return {"law": self.law.value, "sigma_n": self.sigma_n, "m_eps": self.m_eps, "dim": self.dim}

    @classmethod
    def from_dict(cls, data: dict, dim: Optional[int] = None) -> "NoiseSpec":
        data = dict(data)
        if dim is not None:
            data.setdefault("dim", dim)
        if "b" in data:
            return cls.laplace(data["b"], data.get("dim", 1))
        return cls(**data)


def sample(spec: NoiseSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` i.i.d. noise vectors as a (count, dim) array.

    Generalized Laplace uses the Gaussian variance mixture sigma sqrt(G) Z,
    G ~ Gamma(m_eps, 1); the tensor variant draws an independent G per
    coordinate.
    """
    if count < 1:
        raise ConfigError(f"need at least one noise draw, got {count}")
    D = spec.dim
    if spec.is_null:
        return np.zeros((count, D))
    z = rng.standard_normal((count, D))
    if spec.law is NoiseLaw.GAUSSIAN:
        return spec.sigma_n * z
    if spec.law is NoiseLaw.GENERALIZED_LAPLACE:
        g = rng.gamma(spec.m_eps, 1.0, size=(count, 1))
    else:
        g = rng.gamma(spec.m_eps, 1.0, size=(count, D))
    return spec.sigma_n * np.sqrt(g) * z


def sample_per_point(spec: NoiseSpec, n_points: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Independent noise lists for each of ``n_points`` design points, shape (n, count, dim)."""
    return sample(spec, n_points * count, rng).reshape(n_points, count, spec.dim)


def characteristic_values(spec: NoiseSpec, omegas) -> np.ndarray:
    """phi_eps(omega) for every row of an (M, dim) frequency array."""
    omegas = np.asarray(omegas, dtype=float).reshape(-1, spec.dim)
    if spec.is_null:
        return np.ones(len(omegas))
    s2 = spec.sigma_n ** 2
    if spec.law is NoiseLaw.GAUSSIAN:
        return np.exp(-s2 * np.einsum("ij,ij->i", omegas, omegas) / 2.0)
    if spec.law is NoiseLaw.GENERALIZED_LAPLACE:
        return (1.0 + s2 * np.einsum("ij,ij->i", omegas, omegas) / 2.0) ** (-spec.m_eps)
    return np.prod((1.0 + s2 * omegas ** 2 / 2.0) ** (-spec.m_eps), axis=1)


def characteristic_fn(spec: NoiseSpec, omega) -> float:
    """E exp(i omega . eps); real because every law here is symmetric."""
    return float(characteristic_values(spec, np.atleast_1d(np.asarray(omega, dtype=float)))[0])


def empirical_characteristic_fn(samples: np.ndarray, omegas) -> np.ndarray:
    """Real part of the sample characteristic function at each row of ``omegas``."""
    samples = np.asarray(samples, dtype=float)
    omegas = np.asarray(omegas, dtype=float).reshape(-1, samples.shape[1])
    return np.cos(samples @ omegas.T).mean(axis=0)
