"""Manifold designs, Gaussian-process ground truths and noisy observations."""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from smoothreg.errors import ConfigError, FactorizationError
from smoothreg.kernels import KernelSpec, gram_matrix

logger = logging.getLogger(__name__)

ANCHOR_MATCH_TOL = 1e-14
MAX_JITTER = 1e-4


class ManifoldKind(str, Enum):
    LINE = "line"
    CIRCLE = "circle"
    SPHERE = "sphere"


_DIMS = {ManifoldKind.LINE: (1, 1), ManifoldKind.CIRCLE: (2, 1), ManifoldKind.SPHERE: (3, 2)}


@dataclass(frozen=True)
class ManifoldSpec:
    """Line [0, 1] in R^1, circle in R^2 or sphere in R^3."""
    kind: ManifoldKind
    radius: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ManifoldKind(self.kind))
        if self.radius <= 0:
            raise ConfigError(f"radius must be positive, got {self.radius}")

    @classmethod
    def for_ambient_dim(cls, D: int, radius: float = 1.0) -> "ManifoldSpec":
        kinds = {1: ManifoldKind.LINE, 2: ManifoldKind.CIRCLE, 3: ManifoldKind.SPHERE}
        if D not in kinds:
            raise ConfigError(f"no manifold for ambient dimension {D}")
        return cls(kinds[D], radius)

    @property
    def ambient_dim(self) -> int:
        return _DIMS[self.kind][0]

    @property
    def intrinsic_dim(self) -> int:
        return _DIMS[self.kind][1]


def _project(points: np.ndarray, radius: float) -> np.ndarray:
    return radius * points / np.linalg.norm(points, axis=1, keepdims=True)


def sample_manifold(spec: ManifoldSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """n uniform points on the manifold as an (n, D) array."""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if spec.kind is ManifoldKind.LINE:
        return rng.uniform(0.0, 1.0, size=(n, 1))
    if spec.kind is ManifoldKind.CIRCLE:
        theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
        return spec.radius * np.column_stack((np.cos(theta), np.sin(theta)))
    return _project(rng.standard_normal((n, 3)), spec.radius)


def anchor_grid(spec: ManifoldSpec, m: int) -> np.ndarray:
    """Deterministic near-uniform grid of m anchors (Fibonacci lattice on the sphere)."""
    if spec.kind is ManifoldKind.LINE:
        return np.linspace(0.0, 1.0, m)[:, None]
    if spec.kind is ManifoldKind.CIRCLE:
        theta = 2.0 * math.pi * np.arange(m) / m
        return spec.radius * np.column_stack((np.cos(theta), np.sin(theta)))
    k = np.arange(m) + 0.5
    z = 1.0 - 2.0 * k / m
    phi = math.pi * (3.0 - math.sqrt(5.0)) * k
    rho = np.sqrt(1.0 - z ** 2)
    return _project(np.column_stack((rho * np.cos(phi), rho * np.sin(phi), z)), spec.radius)


@dataclass(frozen=True)
class MaternCovariance:
    """Classical Matérn covariance (smoothness nu, lengthscale rho, variance)."""
    nu: float = 5.0
    rho: float = 1.0
    variance: float = 1.0

    def kernel(self, dim: int) -> KernelSpec:
        return KernelSpec.matern_classical(self.nu, self.rho, dim, self.variance)


@dataclass(frozen=True)
class GroundTruth:
    """A GP sample path known at anchors and interpolated by the conditional mean.

    Evaluation returns the anchor value exactly at an anchor, and
    k(x, Z) (Sigma + jitter I)^-1 g elsewhere.
    """
    anchors: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    kernel: KernelSpec
    jitter: float

    def evaluate(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.kernel.dim)
        out = gram_matrix(self.kernel, X, self.anchors) @ self.weights
        dist = cdist(X, self.anchors)
        nearest = dist.argmin(axis=1)
        hit = dist[np.arange(len(X)), nearest] <= ANCHOR_MATCH_TOL
        out[hit] = self.values[nearest[hit]]
        return out

    __call__ = evaluate


class GroundTruthSampler:
    """Cholesky factor of the anchor covariance, reused across sample paths."""

    def __init__(self, manifold: ManifoldSpec, covariance: MaternCovariance, m: int = 2000,
                 jitter: float = 1e-10, anchors: Optional[np.ndarray] = None):
        if m < 2:
            raise ConfigError(f"need at least 2 anchors, got {m}")
        self.manifold = manifold
        self.covariance = covariance
        self.kernel = covariance.kernel(manifold.ambient_dim)
        self.anchors = anchor_grid(manifold, m) if anchors is None else np.asarray(anchors, dtype=float)
        sigma = gram_matrix(self.kernel, self.anchors)
        self.jitter, self.factor = self._factorize(sigma, jitter)

    @staticmethod
    def _factorize(sigma: np.ndarray, jitter: float):
        current = jitter
        while True:
            try:
                L = linalg.cholesky(sigma + current * np.eye(len(sigma)), lower=True)
                if current != jitter:
                    logger.warning(f"Anchor covariance needed jitter {current:.1e} (requested {jitter:.1e})")
                return current, L
            except linalg.LinAlgError:
                current = current * 10.0 if current > 0 else 1e-12
                if current > MAX_JITTER:
                    raise FactorizationError(
                        f"Cholesky failed up to jitter {MAX_JITTER:.1e}; increase jitter or reduce anchors",
                        jitter=current)

    def covariance_of_values(self) -> np.ndarray:
        """Covariance L L^T of the sampled anchor values."""
        return self.factor @ self.factor.T

    def draw(self, rng: np.random.Generator) -> GroundTruth:
        z = rng.standard_normal(len(self.anchors))
        values = self.factor @ z
        weights = linalg.solve_triangular(self.factor, z, lower=True, trans="T")
        return GroundTruth(self.anchors, values, weights, self.kernel, self.jitter)


def draw_ground_truth(manifold: ManifoldSpec, covariance: MaternCovariance, m: int, jitter: float,
                      rng: np.random.Generator) -> GroundTruth:
    """g ~ N(0, Sigma + jitter I) at m anchors, via the lower Cholesky factor.

    Raises:
        FactorizationError: if the factorization fails even with raised jitter.
    """
    return GroundTruthSampler(manifold, covariance, m, jitter).draw(rng)


@dataclass(frozen=True)
class Dataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    f_train: np.ndarray
    noise_var: float

    @property
    def n_train(self) -> int:
        return len(self.y_train)


def make_dataset(ground_truth: GroundTruth, manifold: ManifoldSpec, n_train: int, rng: np.random.Generator,
                 noise_var: float = 0.01, n_test: int = 500) -> Dataset:
    """Independent train, validation (half the training size) and test draws.

    Train and validation responses carry N(0, noise_var) noise; test
    responses are the noiseless f*.
    """
    if n_train < 2:
        raise ConfigError(f"n_train must be >= 2, got {n_train}")
    n_val = math.ceil(n_train / 2)
    X_train = sample_manifold(manifold, n_train, rng)
    X_val = sample_manifold(manifold, n_val, rng)
    X_test = sample_manifold(manifold, n_test, rng)
    f_train = ground_truth.evaluate(X_train)
    sd = math.sqrt(noise_var)
    y_train = f_train + sd * rng.standard_normal(n_train)
    y_val = ground_truth.evaluate(X_val) + sd * rng.standard_normal(n_val)
    return Dataset(X_train, y_train, X_val, y_val, X_test, ground_truth.evaluate(X_test), f_train, noise_var)
