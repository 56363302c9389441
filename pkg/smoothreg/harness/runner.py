"""Grid orchestration for the simulation study: loss tables, U-curves and rates.

Every grid cell is an independent job. Its random streams are derived from
the master seed and the cell coordinates, so a cell gives the same row no
matter which worker runs it or whether it was restored from the store.
"""
import asyncio
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import AsyncIterator, Callable, Dict, List, Optional, Tuple

import numpy as np

from smoothreg.config import LEARNERS, REGULARIZERS, ExperimentConfig
from smoothreg.datagen import (
    Dataset,
    GroundTruth,
    GroundTruthSampler,
    ManifoldSpec,
    MaternCovariance,
    make_dataset,
)
from smoothreg.errors import GridCellError, SmoothregError
from smoothreg.harness.rows import (
    OrderingReport,
    ResultRow,
    Table1Cell,
    UCurvePoint,
    UCurveGates,
    UCurveSummary,
    table1_cells,
    table1_orderings,
    ucurve_gates,
    ucurve_points,
    ucurve_summary,
)
from smoothreg.kernel_gd import FitResult, FixedT, TrainConfig, ValidationEarlyStop, gd_fit, predict_many
from smoothreg.kernels import KernelSpec
from smoothreg.mlp import MlpModel, SgdConfig, TrainResult, select_weight_decay, smoothed_predict, train_augmented
from smoothreg.noise import NoiseSpec
from smoothreg.schedules import ScheduleParams, ScheduleRegime, rate_exponent, schedule
from smoothreg.smoothing import SmoothedGram, build_gram
from smoothreg.storage.db import ResultStore

logger = logging.getLogger(__name__)

STREAM_TRUTH = 1
STREAM_DATA = 2
STREAM_LEARNER = 3


def stream(master_seed: int, *parts: int) -> np.random.Generator:
    """Independent generator for one (master seed, coordinates) pair."""
    return np.random.default_rng([int(master_seed), *[int(p) for p in parts]])


@lru_cache(maxsize=8)
def _sampler(manifold: ManifoldSpec, covariance: MaternCovariance, anchors: int,
             jitter: float) -> GroundTruthSampler:
    return GroundTruthSampler(manifold, covariance, anchors, jitter)


def experiment_data(config: ExperimentConfig, D: int, n: int, seed: int) -> Tuple[GroundTruth, Dataset]:
    """Ground truth for (D, seed), shared across sizes, and the size-n dataset drawn from it."""
    dg = config.datagen
    manifold = ManifoldSpec.for_ambient_dim(D, dg.radius)
    sampler = _sampler(manifold, MaternCovariance(dg.nu, dg.rho, dg.variance), dg.anchors, dg.jitter)
    truth = sampler.draw(stream(config.master_seed, STREAM_TRUTH, D, seed))
    data = make_dataset(truth, manifold, n, stream(config.master_seed, STREAM_DATA, D, n, seed),
                        dg.noise_var, dg.n_test)
    return truth, data


# --- learners ---

@dataclass(frozen=True)
class CellOutcome:
    test_l2: float
    val_l2: float
    t_used: int


def _mse(pred, target) -> float:
    return float(np.mean((np.asarray(pred) - np.asarray(target)) ** 2))


def fit_kernel_gd(config: ExperimentConfig, noise: NoiseSpec, regularizer: str, data: Dataset,
                  rng: np.random.Generator) -> Tuple[CellOutcome, SmoothedGram, FitResult]:
    """Kernel GD on the empirical smoothing Gram, stopped on validation or run with weight decay."""
    kg = config.kernel_gd
    D = data.X_train.shape[1]
    kspec = config.kernel_spec(D)
    N = 1 if noise.is_null else kg.augmentations
    gram = build_gram(kspec, noise, N, data.X_train, rng, shared=config.noise.shared, workers=1)
    beta = kg.beta_c / (data.n_train * kspec.variance)
    if regularizer == "early_stop":
        cfg = TrainConfig(beta, 0.0, kg.t_max, ValidationEarlyStop(kg.check_every), N, kg.mode)
    else:
        t = kg.weight_decay_iterations
        cfg = TrainConfig(beta, kg.alpha, t, FixedT(t), N, kg.mode)
    fit = gd_fit(gram, data.y_train, cfg, validation=(data.X_val, data.y_val))
    outcome = CellOutcome(_mse(predict_many(gram, fit, data.X_test), data.y_test),
                          _mse(predict_many(gram, fit, data.X_val), data.y_val), fit.t_used)
    return outcome, gram, fit


def fit_mlp(config: ExperimentConfig, noise: NoiseSpec, regularizer: str, data: Dataset,
            rng: np.random.Generator) -> Tuple[CellOutcome, TrainResult]:
    """SGD on the augmented loss with early stopping, or with fixed or selected weight decay."""
    s = config.mlp
    D = data.X_train.shape[1]
    N = 1 if noise.is_null else s.augmentations
    common = dict(lr=s.lr, momentum=s.momentum, batch_size=s.batch_size, eval_every=s.eval_every,
                  aug_subsample=s.aug_subsample, eval_augmentations=s.eval_augmentations, loss=s.loss)
    val_set = (data.X_val, data.y_val)
    if regularizer == "early_stop":
        cfg = SgdConfig.early_stopping(max_iters=s.max_iters_early_stop, **common)
        result = train_augmented(MlpModel(D, s.hidden, rng=rng), data.X_train, data.y_train,
                                 noise, N, cfg, val_set, rng)
        val = result.best_val
    else:
        cfg = SgdConfig.with_weight_decay(s.weight_decay, max_iters=s.max_iters_weight_decay, **common)
        if s.weight_decay_mode == "select":
            _, result = select_weight_decay(D, data.X_train, data.y_train, noise, N, cfg, val_set,
                                            int(rng.integers(2 ** 63)), s.weight_decay_candidates, s.hidden)
        else:
            result = train_augmented(MlpModel(D, s.hidden, rng=rng), data.X_train, data.y_train,
                                     noise, N, cfg, val_set, rng)
        val = result.val_curve[-1][1]
    pred = smoothed_predict(result.model, data.X_test, result.noise_used, s.eval_augmentations)
    return CellOutcome(_mse(pred, data.y_test), val, result.best_iter), result


# --- grid cells ---

@dataclass(frozen=True)
class CellJob:
    config: ExperimentConfig
    learner: str
    dim: int
    noise_type: str
    regularizer: str
    n: int
    sigma: float
    seed: int

    @property
    def key(self) -> tuple:
        return (self.learner, self.dim, self.noise_type, self.regularizer, self.n, self.sigma, self.seed)


def grid_jobs(config: ExperimentConfig) -> List[CellJob]:
    jobs = []
    for D in config.dims:
        for code in config.noise_types:
            for reg in config.regularizers:
                for n in config.sizes:
                    for sigma in config.sigmas_for(code):
                        for seed in range(config.seeds):
                            jobs.append(CellJob(config, config.learner, D, code, reg, n, sigma, seed))
    return jobs


def run_cell(job: CellJob) -> ResultRow:
    """Train one grid cell.

    The learner stream depends on (learner, D, regularizer, n, seed) only, so
    every sigma and noise type of a seed starts from the same initialization
    and the sigma = 0 column reproduces the no-smoothing run.

    Raises:
        GridCellError: wrapping any learner failure.
    """
    config = job.config
    try:
        _, data = experiment_data(config, job.dim, job.n, job.seed)
        noise = config.noise_spec(job.noise_type, job.sigma, job.dim)
        rng = stream(config.master_seed, STREAM_LEARNER, LEARNERS.index(job.learner), job.dim,
                     REGULARIZERS.index(job.regularizer), job.n, job.seed)
        if job.learner == "kernel_gd":
            outcome = fit_kernel_gd(config, noise, job.regularizer, data, rng)[0]
        else:
            outcome = fit_mlp(config, noise, job.regularizer, data, rng)[0]
    except Exception as exc:
        raise GridCellError(job.key, exc) from exc
    return ResultRow(*job.key, outcome.test_l2, outcome.val_l2, outcome.t_used)


async def _execute(fn: Callable, jobs: List, workers: int) -> AsyncIterator:
    """Yield fn(job) as jobs finish, on a process pool when workers > 1."""
    if workers <= 1 or len(jobs) <= 1:
        for job in jobs:
            yield fn(job)
        return
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [loop.run_in_executor(pool, fn, job) for job in jobs]
        try:
            for fut in asyncio.as_completed(futures):
                yield await fut
        finally:
            for fut in futures:
                fut.cancel()


async def run_grid(config: ExperimentConfig, store: Optional[ResultStore] = None,
                   on_row: Optional[Callable[[ResultRow], None]] = None) -> List[ResultRow]:
    """Run every grid cell not already stored for this config and return all rows sorted by key."""
    jobs = grid_jobs(config)
    config_hash = config.config_hash()
    rows: Dict[tuple, ResultRow] = {}
    if store is not None:
        for row in await store.get_results(config_hash):
            rows[row.key] = row
    pending = [job for job in jobs if job.key not in rows]
    logger.info(f"{len(jobs)} grid cells: {len(jobs) - len(pending)} restored, {len(pending)} to run "
                f"on {config.workers} worker(s)")
    try:
        async for row in _execute(run_cell, pending, config.workers):
            rows[row.key] = row
            if store is not None:
                await store.store_result(config_hash, row)
            if on_row is not None:
                on_row(row)
    except GridCellError as exc:
        logger.error(f"Grid cell {exc.key} failed: {exc.cause}")
        raise
    wanted = {job.key for job in jobs}
    return sorted((row for key, row in rows.items() if key in wanted), key=lambda r: r.key)


@dataclass
class Table1Result:
    rows: List[ResultRow]
    cells: List[Table1Cell]
    orderings: OrderingReport


async def run_table1(config: ExperimentConfig, store: Optional[ResultStore] = None,
                     on_row: Optional[Callable[[ResultRow], None]] = None) -> Table1Result:
    """Validation-selected mean test loss per (D, type, regularizer, n)."""
    rows = await run_grid(config, store, on_row)
    cells = table1_cells(rows)
    return Table1Result(rows, cells, table1_orderings(cells))


@dataclass
class UCurveResult:
    rows: List[ResultRow]
    points: List[UCurvePoint]
    summary: List[UCurveSummary]
    gates: UCurveGates


async def run_ucurve(config: ExperimentConfig, store: Optional[ResultStore] = None,
                     on_row: Optional[Callable[[ResultRow], None]] = None) -> UCurveResult:
    """Mean loss against sigma per size, with the validation-selected sigma marked."""
    rows = await run_grid(config, store, on_row)
    smoothed = [r for r in rows if r.noise_type != "N"]
    summary = ucurve_summary(smoothed, config.sigma_grid)
    return UCurveResult(rows, ucurve_points(smoothed), summary, ucurve_gates(summary))


# --- convergence rate ---

def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or np.any(x <= 0) or np.any(y <= 0):
        return math.nan
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def rate_noise(regime: ScheduleRegime, params: ScheduleParams, D: int) -> NoiseSpec:
    if regime is ScheduleRegime.GAUSSIAN:
        return NoiseSpec.gaussian(params.sigma_n, D)
    if regime is ScheduleRegime.POLY:
        return NoiseSpec.generalized_laplace(params.sigma_n, params.m_eps, D)
    return NoiseSpec.tensor_laplace(params.sigma_n, params.m_eps, D)


@dataclass(frozen=True)
class RateJob:
    config: ExperimentConfig
    n: int
    seed: int


def rate_schedule(config: ExperimentConfig, n: int) -> Tuple[KernelSpec, ScheduleParams]:
    r = config.rate
    kspec = KernelSpec.from_dict(r.kernel, dim=r.dim)
    manifold = ManifoldSpec.for_ambient_dim(r.dim, config.datagen.radius)
    params = schedule(r.regime, n, r.dim, manifold.intrinsic_dim, kspec.m0, r.mf, r.c_prop,
                      variance=kspec.variance)
    return kspec, params


def run_rate_cell(job: RateJob) -> Tuple[int, int, float, float]:
    """(n, seed, test L2^2 of scheduled kernel GD, test L2^2 of the constant predictor)."""
    config = job.config
    r = config.rate
    try:
        kspec, params = rate_schedule(config, job.n)
        _, data = experiment_data(config, r.dim, job.n, job.seed)
        noise = rate_noise(params.regime, params, r.dim)
        rng = stream(config.master_seed, STREAM_LEARNER, len(LEARNERS), r.dim, job.n, job.seed)
        gram = build_gram(kspec, noise, r.augmentations, data.X_train, rng, workers=1)
        cfg = TrainConfig(params.beta, 0.0, params.t_star, FixedT(params.t_star), r.augmentations)
        fit = gd_fit(gram, r.y_scale * data.y_train, cfg)
        y_test = r.y_scale * data.y_test
        test = _mse(predict_many(gram, fit, data.X_test), y_test)
        baseline = _mse(np.full(len(y_test), r.y_scale * data.y_train.mean()), y_test)
    except SmoothregError as exc:
        raise GridCellError(("rate", job.n, job.seed), exc) from exc
    return job.n, job.seed, test, baseline


@dataclass
class RateReport:
    sizes: List[int]
    seeds: int
    mean_losses: List[float]
    stderr_losses: List[float]
    baseline_losses: List[float]
    schedules: List[ScheduleParams]
    slope_squared: float
    slope_unsquared: float
    baseline_slope: float
    theory: float
    per_seed: Dict[Tuple[int, int], float] = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.slope_squared / self.theory

    @property
    def within_band(self) -> bool:
        """Negative slope within [0.4, 1.5] of the predicted exponent."""
        return self.slope_squared < 0 and 0.4 <= self.ratio <= 1.5

    def summary(self) -> dict:
        return {"slope_squared": self.slope_squared, "slope_unsquared": self.slope_unsquared,
                "baseline_slope": self.baseline_slope, "theory": self.theory, "ratio": self.ratio,
                "within_band": self.within_band}


async def run_rate(config: ExperimentConfig) -> RateReport:
    """Fit the log-log slope of scheduled kernel GD test loss against n."""
    r = config.rate
    sizes = sorted(r.sizes)
    jobs = [RateJob(config, n, seed) for n in sizes for seed in range(r.seeds)]
    tests: Dict[Tuple[int, int], float] = {}
    baselines: Dict[Tuple[int, int], float] = {}
    async for n, seed, test, baseline in _execute(run_rate_cell, jobs, config.workers):
        tests[(n, seed)] = test
        baselines[(n, seed)] = baseline
    means, errs, roots, base = [], [], [], []
    for n in sizes:
        vals = np.array([tests[(n, s)] for s in range(r.seeds)])
        means.append(float(vals.mean()))
        errs.append(float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0)
        roots.append(float(np.sqrt(vals).mean()))
        base.append(float(np.mean([baselines[(n, s)] for s in range(r.seeds)])))
    manifold = ManifoldSpec.for_ambient_dim(r.dim, config.datagen.radius)
    report = RateReport(
        sizes=sizes, seeds=r.seeds, mean_losses=means, stderr_losses=errs, baseline_losses=base,
        schedules=[rate_schedule(config, n)[1] for n in sizes],
        slope_squared=fit_loglog_slope(sizes, means), slope_unsquared=fit_loglog_slope(sizes, roots),
        baseline_slope=fit_loglog_slope(sizes, base),
        theory=rate_exponent(r.regime, manifold.intrinsic_dim, r.mf), per_seed=tests)
    logger.info(f"Rate slope {report.slope_squared:.3f} against predicted {report.theory:.3f}")
    return report


# --- single cell with artifacts ---

@dataclass
class Simulation:
    row: ResultRow
    dataset: Dataset
    gram: Optional[SmoothedGram] = None
    fit: Optional[FitResult] = None
    training: Optional[TrainResult] = None


def simulate(config: ExperimentConfig, dim: int, noise_type: str, regularizer: str, n: int,
             sigma: float, seed: int = 0) -> Simulation:
    """One grid cell, keeping the dataset, Gram, fit or training curves for export."""
    job = CellJob(config, config.learner, dim, noise_type, regularizer, n, sigma, seed)
    _, data = experiment_data(config, dim, n, seed)
    noise = config.noise_spec(noise_type, sigma, dim)
    rng = stream(config.master_seed, STREAM_LEARNER, LEARNERS.index(config.learner), dim,
                 REGULARIZERS.index(regularizer), n, seed)
    if config.learner == "kernel_gd":
        outcome, gram, fit = fit_kernel_gd(config, noise, regularizer, data, rng)
        return Simulation(ResultRow(*job.key, outcome.test_l2, outcome.val_l2, outcome.t_used), data, gram, fit)
    outcome, training = fit_mlp(config, noise, regularizer, data, rng)
    return Simulation(ResultRow(*job.key, outcome.test_l2, outcome.val_l2, outcome.t_used), data,
                      training=training)
