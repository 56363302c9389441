"""Empirical and expected random-smoothing kernels and their Gram matrices.

The empirical kernel averages the base kernel over every ordered pair of
realized noise draws,

    K_S(d) = (1/N^2) sum_{k,l} K(d + eps_k - eps_l),

and the expected kernel is its mean over the noise law, computed from the
spectral side as K~_S(d) = int cos(omega.d) S(omega) |phi_eps(omega)|^2.
"""
import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml
from scipy import integrate
from scipy.spatial.distance import pdist

from smoothreg import noise as noise_mod
from smoothreg.errors import ConfigError, DuplicatePointsError, QuadratureError
from smoothreg.kernels import (
    KernelFamily,
    KernelSpec,
    _matern_half_integer_coefficients,
    kernel_eval,
    kernel_values,
    gram_matrix,
)
from smoothreg.noise import NoiseLaw, NoiseSpec
from smoothreg.special_math import gamma_fn

logger = logging.getLogger(__name__)

# Kernel evaluations per vectorized block.
CHUNK_SIZE = 1 << 22
# Exponent range allowed in the sorted prefix-sum path before falling back.
FAST_PATH_MAX_EXPONENT = 600.0
FAST_PATH_MIN_N = 256
DEFAULT_MC_DRAWS = 100_000

# Calibration set and frozen lower-bound constants for the smallest eigenvalue
# of the expected-kernel Gram. Rewrite with ``smoothreg calibrate --write``.
EIGEN_FLOOR_PATH = Path(__file__).with_name("eigen_floor.yaml")


def _default_workers() -> int:
    return max(1, min(4, os.cpu_count() or 1))


def separation_distance(points) -> float:
    """q_X = half the minimum pairwise distance; infinite for a single point."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if len(points) < 2:
        return math.inf
    return 0.5 * float(pdist(points).min())


# --- empirical kernel ---

def _fast_path_coefficients(kspec: KernelSpec) -> Optional[Tuple[float, Tuple[float, ...]]]:
    """(rate, c_l) when K(r) = variance e^{-a r} sum c_l (a r)^l in one dimension."""
    if kspec.dim != 1:
        return None
    p = kspec.half_integer_order
    if p is None:
        return None
    coeffs = tuple(kspec.variance * c for c in _matern_half_integer_coefficients(p))
    return kspec.rate, coeffs


def _exp_poly_pair_mean(rate: float, coeffs: Sequence[float], a_vals: np.ndarray,
                        b_vals: np.ndarray) -> float:
    """Mean over all (a, b) of e^{-rate |a-b|} sum_l c_l (rate |a-b|)^l in O((Na+Nb) log Nb).

    Sort b once; for each a the pairs with b <= a and b > a become prefix and
    suffix sums of e^{+-rate b} b^m after a binomial expansion of |a - b|^l.
    """
    shift = min(a_vals.min(), b_vals.min())
    a = a_vals - shift
    b = np.sort(b_vals - shift)
    idx = np.searchsorted(b, a, side="right")
    p = len(coeffs) - 1
    e_pos = np.exp(rate * b)
    e_neg = np.exp(-rate * b)
    ea_neg = np.exp(-rate * a)
    ea_pos = np.exp(rate * a)
    prefix = []
    suffix = []
    for m in range(p + 1):
        bm = b ** m
        prefix.append(np.concatenate(([0.0], np.cumsum(e_pos * bm))))
        suffix.append(np.concatenate((np.cumsum((e_neg * bm)[::-1])[::-1], [0.0])))
    total = 0.0
    for l, c in enumerate(coeffs):
        if c == 0.0:
            continue
        acc = np.zeros(len(a))
        for m in range(l + 1):
            binom = math.comb(l, m)
            left = ea_neg * a ** (l - m) * (-1.0) ** m * prefix[m][idx]
            right = ea_pos * (-a) ** (l - m) * suffix[m][idx]
            acc += binom * (left + right)
        total += c * rate ** l * acc.sum()
    return total / (len(a_vals) * len(b_vals))


def _fast_path_usable(kspec: KernelSpec, a_vals: np.ndarray, b_vals: np.ndarray) -> bool:
    fast = _fast_path_coefficients(kspec)
    if fast is None:
        return False
    spread = max(a_vals.max(), b_vals.max()) - min(a_vals.min(), b_vals.min())
    return fast[0] * spread <= FAST_PATH_MAX_EXPONENT


def _pair_mean(kspec: KernelSpec, A: np.ndarray, B: np.ndarray, chunk_size: int = CHUNK_SIZE) -> float:
    """Mean of K(a - b) over all rows a of A and b of B."""
    if kspec.dim == 1 and _fast_path_usable(kspec, A[:, 0], B[:, 0]):
        rate, coeffs = _fast_path_coefficients(kspec)
        return _exp_poly_pair_mean(rate, coeffs, A[:, 0], B[:, 0])
    rows = max(1, chunk_size // len(B))
    total = 0.0
    for start in range(0, len(A), rows):
        block = A[start:start + rows]
        total += kernel_values(kspec, (block[:, None, :] - B[None, :, :]).reshape(-1, kspec.dim)).sum()
    return total / (len(A) * len(B))


def empirical_kernel_values(kspec: KernelSpec, noise, diffs) -> np.ndarray:
    """K_S(d) for every row d of ``diffs`` using the realized noise list."""
    noise = np.asarray(noise, dtype=float).reshape(-1, kspec.dim)
    diffs = np.asarray(diffs, dtype=float).reshape(-1, kspec.dim)
    return np.array([_pair_mean(kspec, d + noise, noise) for d in diffs])


def empirical_smoothing_kernel(kspec: KernelSpec, noise, diff) -> float:
    """(1/N^2) sum_{k1,k2} K(diff + eps_k1 - eps_k2) for a single difference."""
    return float(empirical_kernel_values(kspec, noise, np.atleast_1d(np.asarray(diff, dtype=float)))[0])


# --- expected kernel ---

@dataclass(frozen=True)
class ExpectedKernelValue:
    value: float
    stderr: float = 0.0
    method: str = "exact"


def _scalar_spectral(kspec: KernelSpec) -> Callable[[float], float]:
    """Fast scalar S(w) for a univariate kernel (unit variance)."""
    if kspec.family is KernelFamily.MATERN:
        a2 = kspec.rate ** 2
        const = math.exp(math.lgamma(kspec.m0) - math.lgamma(kspec.nu) - 0.5 * math.log(math.pi)
                         + kspec.nu * math.log(a2))
        m0 = kspec.m0
        return lambda w: const * (a2 + w * w) ** (-m0)
    if kspec.family is KernelFamily.GAUSSIAN:
        s = kspec.scale
        const = s / math.sqrt(math.pi)
        return lambda w: const * math.exp(-s * s * w * w)
    raise ConfigError(f"no scalar spectral density for {kspec.family.value}")


def _scalar_cf_squared(nspec: NoiseSpec) -> Callable[[float], float]:
    """Fast scalar |phi_eps(w)|^2 for a univariate law."""
    s2 = nspec.sigma_n ** 2
    if nspec.is_null:
        return lambda w: 1.0
    if nspec.law is NoiseLaw.GAUSSIAN:
        return lambda w: math.exp(-s2 * w * w)
    m2 = 2.0 * nspec.m_eps
    return lambda w: (1.0 + 0.5 * s2 * w * w) ** (-m2)


def _spectral_quad_1d(kspec: KernelSpec, nspec: NoiseSpec, d: float,
                      epsabs: float, epsrel: float, limit: int) -> float:
    """2 int_0^inf cos(|d| w) S(w) |phi(w)|^2 dw for a univariate kernel and law."""
    spec_fn = _scalar_spectral(kspec)
    cf2 = _scalar_cf_squared(nspec)

    def integrand(w):
        return spec_fn(w) * cf2(w)

    d = abs(float(d))
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            if d == 0.0:
                value, abserr = integrate.quad(integrand, 0.0, np.inf, epsabs=epsabs,
                                               epsrel=epsrel, limit=limit)
            else:
                value, abserr = integrate.quad(integrand, 0.0, np.inf, weight="cos", wvar=d,
                                               epsabs=epsabs, limlst=limit)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"spectral quadrature failed at d={d}: {exc}",
                                  info={"kernel": kspec.to_dict(), "noise": nspec.to_dict(), "d": d}) from exc
    return 2.0 * value


def _product_factors(kspec: KernelSpec) -> Optional[List[KernelSpec]]:
    """Univariate factors whose product is K, when each has a spectral density."""
    if kspec.family is KernelFamily.TENSOR:
        return list(kspec.factors) if kspec.has_spectral_density else None
    if kspec.family is KernelFamily.GAUSSIAN:
        return [KernelSpec.gaussian(kspec.scale, 1)] * kspec.dim
    if kspec.family is KernelFamily.MATERN and kspec.dim == 1:
        return [KernelSpec.matern(kspec.m0, kspec.phi, 1)]
    return None


def expected_kernel_detail(kspec: KernelSpec, nspec: NoiseSpec, diff, *, method: str = "auto",
                           rng: Optional[np.random.Generator] = None, mc_draws: int = DEFAULT_MC_DRAWS,
                           epsabs: float = 1e-12, epsrel: float = 1e-10,
                           limit: int = 200) -> ExpectedKernelValue:
    """Expected smoothing kernel K~_S(diff) together with how it was obtained.

    ``method`` is one of auto, closed_form, quadrature, monte_carlo. Auto
    picks the Gaussian-Gaussian closed form, then per-coordinate spectral
    quadrature, then Monte Carlo over ``mc_draws`` paired noise draws.
    """
    diff = np.atleast_1d(np.asarray(diff, dtype=float))
    if nspec.dim != kspec.dim:
        raise ConfigError(f"kernel dim {kspec.dim} != noise dim {nspec.dim}")
    if nspec.is_null and method in ("auto", "closed_form"):
        return ExpectedKernelValue(kernel_eval(kspec, diff), 0.0, "exact")

    gauss_pair = kspec.family is KernelFamily.GAUSSIAN and (nspec.law is NoiseLaw.GAUSSIAN or nspec.is_null)
    if method == "closed_form" or (method == "auto" and gauss_pair):
        if not gauss_pair:
            raise ConfigError("closed form needs a Gaussian kernel with Gaussian noise")
        s2 = kspec.scale ** 2
        t2 = s2 + nspec.sigma_n ** 2
        value = kspec.variance * (s2 / t2) ** (kspec.dim / 2) * math.exp(-float(diff @ diff) / (4.0 * t2))
        return ExpectedKernelValue(value, 0.0, "closed_form")

    factors = _product_factors(kspec)
    quad_ok = factors is not None and nspec.is_product_form
    if method == "quadrature" or (method == "auto" and quad_ok):
        if not quad_ok:
            raise ConfigError(f"no spectral quadrature path for {kspec.family.value} with {nspec.law.value}")
        marginal = nspec.marginal() if not nspec.is_null else NoiseSpec.none(1)
        value = kspec.variance
        for factor, dj in zip(factors, diff):
            value *= _spectral_quad_1d(factor, marginal, dj, epsabs, epsrel, limit)
        return ExpectedKernelValue(value, 0.0, "quadrature")

    if method not in ("auto", "monte_carlo"):
        raise ConfigError(f"unknown method {method!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    e1 = noise_mod.sample(nspec, mc_draws, rng)
    e2 = noise_mod.sample(nspec, mc_draws, rng)
    vals = kernel_values(kspec, diff[None, :] + e1 - e2)
    return ExpectedKernelValue(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(mc_draws)), "monte_carlo")


def expected_smoothing_kernel(kspec: KernelSpec, nspec: NoiseSpec, diff, **kwargs) -> float:
    """K~_S(diff) = int cos(omega.diff) S(omega) |phi_eps(omega)|^2 d omega."""
    return expected_kernel_detail(kspec, nspec, diff, **kwargs).value


def expected_gram(kspec: KernelSpec, nspec: NoiseSpec, points, rng: Optional[np.random.Generator] = None,
                  **kwargs) -> np.ndarray:
    """Gram matrix of the expected smoothing kernel on ``points``.

    Monte Carlo entries draw successively from one stream (``rng``, or a
    fresh seed-0 generator), so no two entries share noise draws.
    """
    points = np.asarray(points, dtype=float).reshape(-1, kspec.dim)
    kwargs["rng"] = rng if rng is not None else np.random.default_rng(0)
    n = len(points)
    out = np.empty((n, n))
    diag = expected_smoothing_kernel(kspec, nspec, np.zeros(kspec.dim), **kwargs)
    for j in range(n):
        out[j, j] = diag
        for k in range(j + 1, n):
            out[j, k] = out[k, j] = expected_smoothing_kernel(kspec, nspec, points[j] - points[k], **kwargs)
    return out


# --- Gram construction ---

def _augmented_cross(kspec: KernelSpec, A: np.ndarray, B: np.ndarray, symmetric: bool,
                     workers: int, chunk_size: int = CHUNK_SIZE) -> np.ndarray:
    """Block means of K between augmented point sets A (n, Na, D) and B (m, Nb, D)."""
    n, na, D = A.shape
    m, nb, _ = B.shape
    block = max(1, int(math.sqrt(chunk_size / (na * nb))))
    out = np.zeros((n, m))

    def task(i0, j0):
        a = A[i0:i0 + block]
        b = B[j0:j0 + block]
        k = gram_matrix(kspec, a.reshape(-1, D), b.reshape(-1, D))
        out[i0:i0 + len(a), j0:j0 + len(b)] = k.reshape(len(a), na, len(b), nb).mean(axis=(1, 3))

    jobs = [(i0, j0) for i0 in range(0, n, block) for j0 in range(0, m, block)
            if not symmetric or j0 + block > i0]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda job: task(*job), jobs))
    else:
        for job in jobs:
            task(*job)
    if symmetric:
        out = np.triu(out) + np.triu(out, 1).T
    return out


def _pairwise_fast_gram(kspec: KernelSpec, points: np.ndarray, noise: np.ndarray) -> Optional[np.ndarray]:
    n = len(points)
    out = np.empty((n, n))
    eps = noise[:, 0]
    for j in range(n):
        for k in range(j, n):
            a_vals = points[j, 0] - points[k, 0] + eps
            if not _fast_path_usable(kspec, a_vals, eps):
                return None
            out[j, k] = out[k, j] = _pair_mean(kspec, a_vals[:, None], eps[:, None])
    return out


@dataclass(frozen=True)
class SmoothedGram:
    """Empirical smoothing-kernel Gram with its eigendecomposition.

    Eigenvalues are sorted descending. ``noise_used`` is the shared list
    (N, D), or (n, N, D) when every point has its own draws; ``noise_query``
    is the list applied to new query points.
    """
    points: np.ndarray
    gram: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    noise_used: np.ndarray
    noise_query: np.ndarray
    kernel: KernelSpec
    noise_spec: NoiseSpec
    n_aug: int
    shared: bool = True
    workers: int = field(default=1, compare=False)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def eta_max(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def eta_min(self) -> float:
        return float(self.eigenvalues[-1])

    def reconstruction_error(self) -> float:
        """Relative Frobenius error of V diag(eta) V^T against the Gram."""
        recon = (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T
        return float(np.linalg.norm(recon - self.gram) / np.linalg.norm(self.gram))

    def cross_kernel(self, X_new) -> np.ndarray:
        """(K_S(x - x_j))_{x, j} for query points, reusing the stored noise."""
        D = self.kernel.dim
        X_new = np.asarray(X_new, dtype=float).reshape(-1, D)
        query = X_new[:, None, :] + self.noise_query[None, :, :]
        if self.shared:
            train = self.points[:, None, :] + self.noise_used[None, :, :]
        else:
            train = self.points[:, None, :] + self.noise_used
        return _augmented_cross(self.kernel, query, train, symmetric=False, workers=self.workers)

    @classmethod
    def from_matrix(cls, points, matrix, kernel: KernelSpec, noise_spec: NoiseSpec,
                    noise=None) -> "SmoothedGram":
        """Wrap an explicit symmetric kernel matrix (e.g. the expected-kernel Gram)."""
        points = np.asarray(points, dtype=float).reshape(-1, kernel.dim)
        noise = np.zeros((1, kernel.dim)) if noise is None else np.asarray(noise, dtype=float)
        matrix = np.asarray(matrix, dtype=float)
        eigenvalues, eigenvectors = np.linalg.eigh(matrix)
        return cls(points, matrix, eigenvalues[::-1].copy(), eigenvectors[:, ::-1].copy(),
                   noise, noise, kernel, noise_spec, len(noise))


def build_gram(kspec: KernelSpec, nspec: NoiseSpec, N: int, points, rng: np.random.Generator,
               *, shared: bool = True, workers: Optional[int] = None) -> SmoothedGram:
    """Draw the noise list once and assemble the n x n empirical smoothing Gram.

    Raises:
        DuplicatePointsError: if two design points coincide.
    """
    points = np.asarray(points, dtype=float).reshape(-1, kspec.dim)
    if nspec.dim != kspec.dim:
        raise ConfigError(f"kernel dim {kspec.dim} != noise dim {nspec.dim}")
    if separation_distance(points) == 0.0:
        raise DuplicatePointsError("design points must be pairwise distinct (q_X = 0)")
    workers = workers or _default_workers()

    if shared:
        noise_used = noise_mod.sample(nspec, N, rng)
        noise_query = noise_used
        gram = None
        if kspec.dim == 1 and N >= FAST_PATH_MIN_N and _fast_path_coefficients(kspec) is not None:
            gram = _pairwise_fast_gram(kspec, points, noise_used)
        if gram is None:
            aug = points[:, None, :] + noise_used[None, :, :]
            gram = _augmented_cross(kspec, aug, aug, symmetric=True, workers=workers)
    else:
        noise_used = noise_mod.sample_per_point(nspec, len(points), N, rng)
        noise_query = noise_mod.sample(nspec, N, rng)
        aug = points[:, None, :] + noise_used
        gram = _augmented_cross(kspec, aug, aug, symmetric=True, workers=workers)

    eigenvalues, eigenvectors = np.linalg.eigh(gram)
    eigenvalues = eigenvalues[::-1].copy()
    eigenvectors = eigenvectors[:, ::-1].copy()
    if eigenvalues[-1] < -1e-10 * eigenvalues[0]:
        logger.warning(f"Smoothed Gram has eigenvalue {eigenvalues[-1]:.3e} below round-off level")
    logger.debug(f"Built {len(points)}x{len(points)} smoothed Gram with N={N}, "
                 f"eta in [{eigenvalues[-1]:.3e}, {eigenvalues[0]:.3e}]")
    for arr in (points, gram, eigenvalues, eigenvectors, noise_used, noise_query):
        arr.setflags(write=False)
    return SmoothedGram(points, gram, eigenvalues, eigenvectors, noise_used, noise_query,
                        kspec, nspec, N, shared, workers)


# --- augmentation error diagnostics ---

@dataclass(frozen=True)
class SupGapRow:
    n_aug: int
    mean_gap: float


def sup_gap_estimate(kspec: KernelSpec, nspec: NoiseSpec, N_grid: Sequence[int], diff_grid,
                     reps: int, rng: np.random.Generator, **expected_kwargs) -> List[SupGapRow]:
    """Mean over ``reps`` noise redraws of max over ``diff_grid`` of |K~_S - K_S|."""
    if not len(N_grid) or not len(diff_grid):
        raise ConfigError("N_grid and diff_grid must be nonempty")
    diffs = np.asarray(diff_grid, dtype=float).reshape(-1, kspec.dim)
    if nspec.is_null:
        return [SupGapRow(int(N), 0.0) for N in N_grid]
    expected = np.array([expected_smoothing_kernel(kspec, nspec, d, **expected_kwargs) for d in diffs])
    rows = []
    for N in N_grid:
        gaps = []
        for _ in range(reps):
            eps = noise_mod.sample(nspec, int(N), rng)
            gaps.append(np.abs(empirical_kernel_values(kspec, eps, diffs) - expected).max())
        rows.append(SupGapRow(int(N), float(np.mean(gaps))))
        logger.debug(f"sup-gap N={N}: {rows[-1].mean_gap:.4e}")
    return rows


def augmentation_condition(eta_min_expected: float, n: int, N: int) -> Tuple[bool, int]:
    """Whether eta_n(K~)/2 >= n sqrt(log N / N), and the smallest N for which it does."""
    def lhs(count):
        return n * math.sqrt(math.log(count) / count)

    target = 0.5 * eta_min_expected
    holds = N >= 2 and lhs(N) <= target
    if target <= 0:
        return holds, -1
    hi = 3
    while lhs(hi) > target:
        hi *= 2
        if hi > 1 << 62:
            return holds, -1
    lo = max(3, hi // 2)
    while lo < hi:
        mid = (lo + hi) // 2
        if lhs(mid) <= target:
            hi = mid
        else:
            lo = mid + 1
    return holds, hi


# --- eigenvalue floors of the expected Gram ---

def lemma_radius(q: float, D: int) -> float:
    """M = (12 / q) (pi Gamma(D/2 + 1)^2 / 9)^(1 / (D + 1))."""
    return 12.0 / q * (math.pi * gamma_fn(D / 2 + 1) ** 2 / 9.0) ** (1.0 / (D + 1))


def floor_case(kspec: KernelSpec, nspec: NoiseSpec) -> str:
    if nspec.law is NoiseLaw.GAUSSIAN:
        return "C3"
    if nspec.law is NoiseLaw.TENSOR_GENERALIZED_LAPLACE and kspec.family is KernelFamily.TENSOR:
        return "C2"
    if nspec.law is NoiseLaw.GENERALIZED_LAPLACE:
        return "C1"
    raise ConfigError(f"no eigenvalue floor for {kspec.family.value} kernel with {nspec.law.value} noise")


def eigen_floor_bound(kspec: KernelSpec, nspec: NoiseSpec, q: float,
                      constant: Optional[float] = None) -> float:
    """Lower bound on eta_n(K~) for separation distance q, in the matching noise case."""
    case = floor_case(kspec, nspec)
    if constant is None:
        constant = eigen_floor_constants()[case]
    D = kspec.dim
    M = lemma_radius(q, D)
    s2m2 = nspec.sigma_n ** 2 * M ** 2
    base = math.log1p(4.0 * M ** 2)
    if case == "C1":
        log_b = -kspec.m0 * base - nspec.m_eps * math.log1p(4.0 * s2m2)
    elif case == "C2":
        log_b = -kspec.m0 * D * base - nspec.m_eps * D * math.log1p(4.0 * s2m2)
    else:
        log_b = -kspec.m0 * base - 8.0 * s2m2
    return constant * math.exp(log_b + D * math.log(M))


@dataclass(frozen=True)
class EigenFloorCheck:
    case: str
    eta_min: float
    bound: float
    q: float
    passed: bool


def check_eigen_floor(kspec: KernelSpec, nspec: NoiseSpec, points, constant: Optional[float] = None,
                      rel_tol: float = 1e-12, **expected_kwargs) -> EigenFloorCheck:
    """Compare eta_n of the expected-kernel Gram with its separation-distance floor.

    ``rel_tol`` absorbs quadrature and eigensolver round-off relative to eta_1.
    """
    gram = expected_gram(kspec, nspec, points, **expected_kwargs)
    eig = np.linalg.eigvalsh(gram)
    q = separation_distance(points)
    bound = eigen_floor_bound(kspec, nspec, q, constant)
    passed = eig[0] >= bound - rel_tol * eig[-1]
    return EigenFloorCheck(floor_case(kspec, nspec), float(eig[0]), bound, q, bool(passed))


def random_design(D: int, n: int, rng: np.random.Generator, min_separation: float = 0.01) -> np.ndarray:
    """n uniform points in [0, 1]^D with q_X >= min_separation (rejection)."""
    while True:
        points = rng.uniform(0.0, 1.0, size=(n, D))
        if separation_distance(points) >= min_separation:
            return points


def floor_calibration_cases() -> Dict[str, Tuple[KernelSpec, NoiseSpec]]:
    """Kernel and noise pairs used to calibrate and check the eigenvalue floors."""
    unit = 1.0 / math.sqrt(2.0)
    return {
        "C1": (KernelSpec.matern(1.0, unit, 1), NoiseSpec.generalized_laplace(0.05, 1.0, 1)),
        "C2": (KernelSpec.tensor([KernelSpec.matern(1.0, unit, 1)] * 2), NoiseSpec.tensor_laplace(0.05, 1.0, 2)),
        "C3": (KernelSpec.matern(1.0, unit, 1), NoiseSpec.gaussian(0.02, 1)),
    }


def calibration_designs(seed: int, case_index: int, D: int, n: int, designs: int):
    """Designs of one floor case; a shorter run is a prefix of a longer one."""
    rng = np.random.default_rng([seed, case_index])
    for _ in range(designs):
        yield random_design(D, n, rng)


def calibrate_floor_constants(seed: int, designs: int = 100, n: int = 10,
                              cases: Optional[Dict[str, Tuple[KernelSpec, NoiseSpec]]] = None,
                              **expected_kwargs) -> Dict[str, float]:
    """Smallest observed eta_n / bound(C = 1) per case over the seeded designs.

    A case whose bound underflows on every design reports ``inf``.
    """
    cases = cases or floor_calibration_cases()
    expected_kwargs.setdefault("epsabs", 1e-14)
    ratios = {}
    for index, (case, (kspec, nspec)) in enumerate(cases.items()):
        worst = math.inf
        for points in calibration_designs(seed, index, kspec.dim, n, designs):
            check = check_eigen_floor(kspec, nspec, points, constant=1.0, **expected_kwargs)
            if check.bound > 0:
                worst = min(worst, check.eta_min / check.bound)
        ratios[case] = worst
        logger.info(f"Eigen floor calibration {case}: min ratio {worst:.4e}")
    return ratios


@dataclass(frozen=True)
class FloorCalibration:
    seed: int
    designs: int
    points: int
    constants: Dict[str, float] = field(default_factory=dict)


def load_floor_calibration(path: Optional[Path] = None) -> FloorCalibration:
    path = Path(path or EIGEN_FLOOR_PATH)
    with open(path) as f:
        try:
            data = yaml.safe_load(f) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"could not parse {path}: {exc}") from exc
    try:
        recorded = data["calibration"]
        return FloorCalibration(
            seed=int(recorded["seed"]),
            designs=int(recorded["designs"]),
            points=int(recorded["points"]),
            constants={str(k): float(v) for k, v in (data.get("constants") or {}).items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path} is not an eigen-floor calibration file: {exc}") from exc


def freeze_floor_constants(ratios: Dict[str, float]) -> Dict[str, float]:
    """Constants from calibration ratios; an all-underflow case gets 0."""
    return {case: (ratio if math.isfinite(ratio) else 0.0) for case, ratio in ratios.items()}


def save_floor_constants(calibration: FloorCalibration, path: Optional[Path] = None) -> Path:
    """Write frozen constants together with the calibration set they came from."""
    path = Path(path or EIGEN_FLOOR_PATH)
    data = {
        "calibration": {"seed": calibration.seed, "designs": calibration.designs, "points": calibration.points},
        "constants": {case: float(value) for case, value in calibration.constants.items()},
    }
    with open(path, "w") as f:
        f.write("# Eigenvalue-floor constants, written by `smoothreg calibrate --write`.\n")
        yaml.safe_dump(data, f, sort_keys=False)
    _cached_floor_constants.cache_clear()
    logger.info(f"Wrote eigen floor constants to {path}")
    return path


@lru_cache(maxsize=None)
def _cached_floor_constants(path: Path) -> Tuple[Tuple[str, float], ...]:
    calibration = load_floor_calibration(path)
    if calibration.constants:
        return tuple(calibration.constants.items())
    logger.info(f"No frozen eigen floor constants in {path}; calibrating over "
                f"{calibration.designs} designs (seed {calibration.seed})")
    ratios = calibrate_floor_constants(calibration.seed, calibration.designs, calibration.points)
    return tuple(freeze_floor_constants(ratios).items())


def eigen_floor_constants(path: Optional[Path] = None) -> Dict[str, float]:
    """Frozen floor constants per case, calibrated once per process if the file has none."""
    return dict(_cached_floor_constants(Path(path or EIGEN_FLOOR_PATH)))
