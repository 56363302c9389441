"""Self-checks that gate a checkout: identities, Monte Carlo rates, bounds and gradients.

Each check returns (passed, detail). A check that raises counts as failed
with the exception text as its detail; the report then aggregates every
failure into one VerificationError.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from smoothreg.config import VerifySettings
from smoothreg.errors import VerificationError
from smoothreg.kernel_gd import (
    FixedT,
    GdMode,
    TrainConfig,
    audit_scalar_sweep,
    comparison_audit,
    gd_fit,
    risk_comparison,
)
from smoothreg.kernels import KernelSpec, gram_matrix
from smoothreg.mlp import MlpModel, grad_check, min_preactivation_margin
from smoothreg.noise import NoiseSpec, characteristic_values, empirical_characteristic_fn, sample
from smoothreg.smoothing import (
    SmoothedGram,
    build_gram,
    calibration_designs,
    check_eigen_floor,
    expected_kernel_detail,
    floor_calibration_cases,
    load_floor_calibration,
    sup_gap_estimate,
)
from smoothreg.special_math import bessel_k, beta_fn, gamma_fn

logger = logging.getLogger(__name__)

SUP_GAP_SLOPE_BAND = (-0.65, -0.35)
GD_AGREEMENT_TOL = 1e-8
SPECTRAL_AGREEMENT_TOL = 1e-6
MC_STDERR_TOL = 3.0
GRAD_CHECK_TOL = 1e-4
KINK_MARGIN = 1e-3


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


@dataclass
class VerifyReport:
    checks: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> List[str]:
        return [f"{c.name}: {c.detail}" for c in self.checks if not c.passed]

    def raise_for_failures(self):
        if not self.passed:
            raise VerificationError(self.failures)


Outcome = Tuple[bool, str]


# --- individual checks ---

def check_special_functions(settings: VerifySettings, rng: np.random.Generator) -> Outcome:
    cases = [
        ("gamma(5)", gamma_fn(5.0), 24.0),
        ("gamma(1/2)", gamma_fn(0.5), math.sqrt(math.pi)),
        ("beta(2,3)", beta_fn(2.0, 3.0), 1.0 / 12.0),
        ("K_1/2(1)", bessel_k(0.5, 1.0), math.sqrt(math.pi / 2.0) * math.exp(-1.0)),
        ("K_3/2(2)", bessel_k(1.5, 2.0), math.sqrt(math.pi / 4.0) * math.exp(-2.0) * 1.5),
        ("K_-1/2(1)", bessel_k(-0.5, 1.0), bessel_k(0.5, 1.0)),
    ]
    worst = max(abs(got - want) / abs(want) for _, got, want in cases)
    bad = [name for name, got, want in cases if abs(got - want) > 1e-12 * abs(want)]
    return not bad, f"max rel err {worst:.2e}" + (f", failing {bad}" if bad else "")


def check_noise_cf(settings: VerifySettings, rng: np.random.Generator) -> Outcome:
    N = settings.cf_draws
    tol = 3.0 / math.sqrt(N)
    laws = {
        "gaussian": NoiseSpec.gaussian(0.5, 2),
        "generalized_laplace": NoiseSpec.generalized_laplace(0.5, 1.5, 2),
        "tensor_laplace": NoiseSpec.tensor_laplace(0.5, 1.0, 2),
    }
    omegas = rng.uniform(-3.0, 3.0, size=(20, 2))
    worst = 0.0
    bad = []
    for name, spec in laws.items():
        gap = float(np.max(np.abs(empirical_characteristic_fn(sample(spec, N, rng), omegas)
                                  - characteristic_values(spec, omegas))))
        worst = max(worst, gap)
        if gap > tol:
            bad.append(name)
    return not bad, f"max |ecf - cf| {worst:.2e} against {tol:.2e}" + (f", failing {bad}" if bad else "")


def check_spectral_gaussian(settings: VerifySettings, rng: np.random.Generator) -> Outcome:
    """Gaussian kernel with Gaussian noise: closed form, quadrature and Monte Carlo agree."""
    notes = []
    ok = True
    for D, diffs in ((1, [[0.0], [0.4], [1.0]]), (2, [[0.3, -0.2]])):
        kspec = KernelSpec.gaussian(0.5, D)
        nspec = NoiseSpec.gaussian(0.3, D)
        for d in diffs:
            closed = expected_kernel_detail(kspec, nspec, d, method="closed_form").value
            quad = expected_kernel_detail(kspec, nspec, d, method="quadrature").value
            mc = expected_kernel_detail(kspec, nspec, d, method="monte_carlo", rng=rng,
                                        mc_draws=settings.mc_draws)
            rel = abs(quad - closed) / closed
            z = abs(mc.value - closed) / mc.stderr
            if rel > SPECTRAL_AGREEMENT_TOL or z > MC_STDERR_TOL:
                ok = False
                notes.append(f"D={D} d={d}: quad rel {rel:.2e}, mc z {z:.2f}")
    return ok, "; ".join(notes) or "closed form, quadrature and Monte Carlo agree"


def check_spectral_matern(settings: VerifySettings, rng: np.random.Generator) -> Outcome:
    kspec = KernelSpec.matern(1.5, 1.0, 1)
    nspec = NoiseSpec.generalized_laplace(0.2, 2.0, 1)
    quad = expected_kernel_detail(kspec, nspec, [0.4], method="quadrature").value
    mc = expected_kernel_detail(kspec, nspec, [0.4], method="monte_carlo", rng=rng, mc_draws=settings.mc_draws)
    z = abs(mc.value - quad) / mc.stderr
    return z <= MC_STDERR_TOL, f"quadrature {quad:.6f}, Monte Carlo {mc.value:.6f} (z = {z:.2f})"


def check_sup_gap_rate(settings: VerifySettings, rng: np.random.Generator) -> Outcome:
    """Sup-gap between empirical and expected smoothing kernels decays like N^-1/2."""
    from smoothreg.harness.runner import fit_loglog_slope

    kspec = KernelSpec.matern(1.0, 1.0 / math.sqrt(2.0), 1)
    nspec = NoiseSpec.gaussian(0.3, 1)
    rows = sup_gap_estimate(kspec, nspec, settings.sup_gap_sizes, np.linspace(-1.0, 1.0, 21),
                            settings.sup_gap_reps, rng)
    slope = fit_loglog_slope([r.n_aug for r in rows], [r.mean_gap for r in rows])
    lo, hi = SUP_GAP_SLOPE_BAND
    return lo <= slope <= hi, f"slope {slope:.3f} over N = {[r.n_aug for r in rows]}"


def check_eigen_floors(settings: VerifySettings, rng: np.random.Generator) -> Outcome:
    """Frozen floors hold on the recorded calibration designs."""
    calibration = load_floor_calibration()
    designs = min(settings.floor_designs, calibration.designs)
    violations = {}
    for index, (case, (kspec, nspec)) in enumerate(floor_calibration_cases().items()):
        bad = 0
        for points in calibration_designs(calibration.seed, index, kspec.dim, calibration.points, designs):
            if not check_eigen_floor(kspec, nspec, points, epsabs=1e-14).passed:
                bad += 1
        violations[case] = bad
    return not any(violations.values()), (f"violations per case {violations} over {designs} designs "
                                          f"(seed {calibration.seed})")


def check_comparison_audit(settings: VerifySettings, rng: np.random.Generator) -> Outcome:
    eta = np.logspace(-6.0, 2.0, 200)
    t_grid = np.unique(np.round(np.logspace(0.0, 5.0, 60)).astype(int))
    sweep = audit_scalar_sweep(eta, t_grid, 0.9 / eta.max(), raise_on_violation=False)
    notes = [f"scalar sweep {sweep.violations}/{sweep.checked} violations"]
    ok = sweep.passed

    points = np.linspace(0.0, 1.0, 30)[:, None]
    gram = build_gram(KernelSpec.matern(1.5, 1.0, 1), NoiseSpec.gaussian(0.1, 1), 64, points, rng, workers=1)
    f_star = np.sin(2.0 * math.pi * points[:, 0])
    y = f_star + 0.1 * rng.standard_normal(len(points))
    beta = 0.9 / gram.eta_max
    for t in (1, 10, 100, 1000):
        report = comparison_audit(gram, y, beta, t, raise_on_violation=False)
        risk = risk_comparison(gram, f_star, 0.01, beta, t)
        if not report.passed or not risk.bound_holds:
            ok = False
            notes.append(f"t={t}: {'; '.join(report.messages) or 'risk bound violated'}")
    return ok, "; ".join(notes)


def check_gd_closed_form(settings: VerifySettings, rng: np.random.Generator) -> Outcome:
    """Unrolled iteration and eigenbasis closed form give the same fit."""
    kspec = KernelSpec.matern(1.5, 1.0, 1)
    nspec = NoiseSpec.none(1)
    worst = 0.0
    for _ in range(settings.gd_problems):
        n = int(rng.integers(5, 51))
        points = np.sort(rng.uniform(0.0, 1.0, n))[:, None]
        gram = SmoothedGram.from_matrix(points, gram_matrix(kspec, points), kspec, nspec)
        y = rng.standard_normal(n)
        beta = 0.9 / gram.eta_max
        for t in (1, 10, 1000):
            for alpha in (0.0, 0.05):
                fits = [gd_fit(gram, y, TrainConfig(beta, alpha, t, FixedT(t), mode=mode)).fitted_values
                        for mode in (GdMode.CLOSED_FORM, GdMode.ITERATIVE)]
                scale = max(float(np.linalg.norm(fits[0])), 1e-300)
                worst = max(worst, float(np.linalg.norm(fits[0] - fits[1])) / scale)
    return worst <= GD_AGREEMENT_TOL, f"max relative disagreement {worst:.2e}"


def check_mlp_gradients(settings: VerifySettings, rng: np.random.Generator) -> Outcome:
    worst = 0.0
    checked = 0
    while checked < 5:
        D = int(rng.integers(1, 4))
        model = MlpModel(D, (8, 8), rng=rng)
        for b in model.biases[:-1]:
            b[...] = rng.normal(0.0, 0.1, size=b.shape)
        x = rng.uniform(-1.0, 1.0, D)
        if min_preactivation_margin(model, x) < KINK_MARGIN:
            continue
        worst = max(worst, grad_check(model, x, float(rng.standard_normal())))
        checked += 1
    return worst < GRAD_CHECK_TOL, f"max relative gradient error {worst:.2e}"


CHECKS: List[Tuple[str, Callable[[VerifySettings, np.random.Generator], Outcome]]] = [
    ("special_functions", check_special_functions),
    ("noise_characteristic_functions", check_noise_cf),
    ("spectral_gaussian", check_spectral_gaussian),
    ("spectral_matern", check_spectral_matern),
    ("sup_gap_rate", check_sup_gap_rate),
    ("eigen_floors", check_eigen_floors),
    ("comparison_audit", check_comparison_audit),
    ("gd_closed_form", check_gd_closed_form),
    ("mlp_gradients", check_mlp_gradients),
]


def run_verify(settings: VerifySettings, master_seed: int = 0, only: Tuple[str, ...] = (),
               on_check: Optional[Callable[[CheckResult], None]] = None, raise_on_failure: bool = True) -> VerifyReport:
    """Run every check (or those named in ``only``) and aggregate failures.

    Each check draws from its own stream, so a subset reproduces the same
    numbers as the full run.

    Raises:
        VerificationError: listing every failed check, unless ``raise_on_failure`` is False.
    """
    report = VerifyReport()
    for index, (name, fn) in enumerate(CHECKS):
        if only and name not in only:
            continue
        rng = np.random.default_rng([int(master_seed), 4, index])
        start = time.perf_counter()
        try:
            passed, detail = fn(settings, rng)
        except Exception as exc:
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        result = CheckResult(name, bool(passed), detail, time.perf_counter() - start)
        if result.passed:
            logger.info(f"Check {name} passed in {result.seconds:.1f}s: {detail}")
        else:
            logger.error(f"Check {name} failed: {detail}")
        report.checks.append(result)
        if on_check is not None:
            on_check(result)
    if raise_on_failure:
        report.raise_for_failures()
    return report
