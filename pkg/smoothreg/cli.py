"""smoothreg CLI: run the simulation grids, rate study, schedules and self-checks."""
import asyncio
import functools
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import click
from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from smoothreg import __version__
from smoothreg.errors import SmoothregError

console = Console()
logger = logging.getLogger("smoothreg")

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def _setup_logging(config):
    handlers = [logging.StreamHandler()]
    if config.logging.file:
        handlers.append(logging.FileHandler(config.logging.file))
    logging.basicConfig(level=getattr(logging, config.logging.level.upper(), logging.INFO),
                        format=LOG_FORMAT, handlers=handlers, force=True)


def _load(config_path=None, seed=None, workers=None, quick=False, out=None, learner=None):
    """Config file, then .env, then command-line flags."""
    from smoothreg.config import load_config
    config = load_config(config_path)
    overrides = {k: v for k, v in (("master_seed", seed), ("workers", workers), ("out_dir", out),
                                   ("learner", learner)) if v is not None}
    if overrides:
        config = replace(config, **overrides)
    if quick:
        config = config.quick()
    _setup_logging(config)
    return config


def _out_dir(config) -> Path:
    path = Path(config.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


async def _get_store(config, use_db: bool):
    if not (use_db and config.storage.enabled):
        return None
    from smoothreg.storage.db import ResultStore
    store = ResultStore(config.storage.database_path)
    await store.initialize()
    return store


def _write_manifest(out: Path, name: str, command: str, config, started: float, columns=None, extra=None):
    from smoothreg.export import build_manifest, export_manifest_json, write_text
    manifest = build_manifest(command, config.to_dict(), config.master_seed, time.perf_counter() - started,
                              columns=columns, extra=extra)
    write_text(str(out / name), export_manifest_json(manifest))
    return manifest


def handle_errors(fn):
    """Turn expected library failures into a red message and exit status 1."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (SmoothregError, FileNotFoundError) as exc:
            logger.error(f"{type(exc).__name__}: {exc}")
            console.print(f"[red bold]Error:[/red bold] {exc}")
            sys.exit(1)
    return wrapper


def common_options(fn):
    options = [
        click.option('--config', 'config_path', type=click.Path(dir_okay=False), help='Path to config.yaml'),
        click.option('--seed', type=click.IntRange(0, 2 ** 64 - 1), help='Master seed'),
        click.option('--workers', '-w', type=click.IntRange(min=1), help='Worker processes'),
        click.option('--quick', is_flag=True, help='Reduced grids for a smoke run'),
        click.option('--out', help='Output directory'),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


@click.group()
@click.version_option(version=__version__, prog_name="smoothreg")
def cli():
    """smoothreg: random-smoothing kernel regression experiments."""
    pass


def _grid_command(name: str, config_path, seed, workers, quick, out, learner, db):
    """Shared body of ``table1`` and ``ucurve``: run the grid, store rows, write CSVs."""
    from smoothreg.export import (
        RESULT_COLUMNS,
        export_results_csv,
        export_table1_csv,
        export_ucurve_csv,
        write_text,
    )
    from smoothreg.harness.runner import grid_jobs, run_table1, run_ucurve

    config = _load(config_path, seed, workers, quick, out, learner)
    out_dir = _out_dir(config)
    started = time.perf_counter()

    async def _run():
        store = await _get_store(config, db)
        total = len(grid_jobs(config))
        done = 0
        try:
            with console.status(f"[bold blue]Running {total} {config.learner} grid cells...") as status:
                def on_row(row):
                    nonlocal done
                    done += 1
                    status.update(f"[bold blue]{done} new cells finished ({total} total)...")

                runner = run_table1 if name == "table1" else run_ucurve
                result = await runner(config, store, on_row)
            manifest = _write_manifest(out_dir, f"{name}_manifest.json", name, config, started,
                                       columns=RESULT_COLUMNS, extra={"config_hash": config.config_hash()})
            if store is not None:
                await store.record_run(name, config.config_hash(), config.master_seed, manifest)
        finally:
            if store is not None:
                await store.close()
        return result

    result = asyncio.run(_run())
    write_text(str(out_dir / f"{name}_rows.csv"), export_results_csv(result.rows))
    if name == "table1":
        write_text(str(out_dir / "table1.csv"), export_table1_csv(result.cells))
        _print_table1(result)
    else:
        write_text(str(out_dir / "ucurve.csv"), export_ucurve_csv(result.points))
        _print_ucurve(result)
    console.print(f"[green]Wrote {len(result.rows)} rows to {out_dir}[/green]")
    failures = result.orderings.failures if name == "table1" else result.gates.failures
    if failures:
        for failure in failures:
            console.print(f"[red]Acceptance check failed: {failure}[/red]")
        sys.exit(1)


@cli.command()
@common_options
@click.option('--learner', type=click.Choice(['mlp', 'kernel_gd']), help='Learner for every grid cell')
@click.option('--db/--no-db', default=True, help='Resume from and store into the results database')
@handle_errors
def table1(config_path, seed, workers, quick, out, learner, db):
    """Validation-selected test loss per dimension, noise type, regularizer and size."""
    _grid_command("table1", config_path, seed, workers, quick, out, learner, db)


@cli.command()
@common_options
@click.option('--learner', type=click.Choice(['mlp', 'kernel_gd']), help='Learner for every grid cell')
@click.option('--db/--no-db', default=True, help='Resume from and store into the results database')
@handle_errors
def ucurve(config_path, seed, workers, quick, out, learner, db):
    """Test loss against smoothing scale, with the validation choice marked."""
    _grid_command("ucurve", config_path, seed, workers, quick, out, learner, db)


@cli.command()
@common_options
@handle_errors
def rate(config_path, seed, workers, quick, out):
    """Log-log slope of scheduled kernel GD test loss against n."""
    from smoothreg.export import RATE_COLUMNS, export_rate_csv, write_text
    from smoothreg.harness.runner import run_rate

    config = _load(config_path, seed, workers, quick, out)
    out_dir = _out_dir(config)
    started = time.perf_counter()
    with console.status(f"[bold blue]Fitting {len(config.rate.sizes)} sizes x {config.rate.seeds} seeds..."):
        report = asyncio.run(run_rate(config))
    write_text(str(out_dir / "rate.csv"), export_rate_csv(report))
    _write_manifest(out_dir, "rate_manifest.json", "rate", config, started, columns=RATE_COLUMNS,
                    extra={"rate": report.summary()})

    table = Table(box=box.ROUNDED, title=f"Rate study ({config.rate.regime} smoothing, D={config.rate.dim})")
    table.add_column("n", justify="right")
    table.add_column("sigma_n", justify="right")
    table.add_column("t*", justify="right")
    table.add_column("mean test L2^2", justify="right")
    table.add_column("stderr", justify="right", style="dim")
    table.add_column("constant predictor", justify="right", style="dim")
    for i, n in enumerate(report.sizes):
        table.add_row(str(n), f"{report.schedules[i].sigma_n:.4f}", str(report.schedules[i].t_star),
                      f"{report.mean_losses[i]:.4e}", f"{report.stderr_losses[i]:.1e}",
                      f"{report.baseline_losses[i]:.4e}")
    console.print(table)
    colour = "green" if report.within_band else "red"
    console.print(Panel(
        f"[bold]Slope (squared):[/bold]   {report.slope_squared:.3f}\n"
        f"[bold]Slope (unsquared):[/bold] {report.slope_unsquared:.3f}\n"
        f"[bold]Theory:[/bold]            {report.theory:.3f}\n"
        f"[bold]Ratio:[/bold]             [{colour}]{report.ratio:.2f}[/{colour}]\n"
        f"[bold]Baseline slope:[/bold]    {report.baseline_slope:.3f}",
        title="Convergence rate", border_style=colour))
    if not report.within_band:
        console.print("[red]Fitted slope is outside [0.4, 1.5] x theory[/red]")
        sys.exit(1)


@cli.command()
@click.option('--regime', type=click.Choice(['poly', 'gaussian', 'tensor']), default='gaussian')
@click.option('--n', 'sizes', default='25,50,100,200,400', help='Comma-separated sample sizes')
@click.option('--dim', 'D', default=1, type=int, help='Ambient dimension D')
@click.option('--intrinsic-dim', 'd', type=int, help='Manifold dimension d (defaults to D)')
@click.option('--m0', default=2.0, help='Kernel smoothness')
@click.option('--mf', default=2.0, help='Target smoothness')
@click.option('--c-prop', default=1.0, help='Constant in front of every relation')
@click.option('--m-eps', type=float, help='Noise shape override')
@click.option('--out', help='Write schedule.csv to this directory')
@handle_errors
def schedule(regime, sizes, D, d, m0, mf, c_prop, m_eps, out):
    """Smoothing scale, stopping time and weight decay for each n."""
    from smoothreg.export import export_schedule_csv, write_text
    from smoothreg.schedules import schedule as compute_schedule

    ns = [int(s) for s in sizes.split(',') if s.strip()]
    params = [compute_schedule(regime, n, D, d or D, m0, mf, c_prop, m_eps=m_eps) for n in ns]

    table = Table(box=box.ROUNDED, title=f"{regime} schedule (D={D}, d={d or D}, m0={m0}, mf={mf})")
    for col in ("n", "sigma_n", "m_eps", "t*", "alpha*", "lambda_n", "t (weight decay)"):
        table.add_column(col, justify="right")
    for p in params:
        table.add_row(str(p.n), f"{p.sigma_n:.4g}", f"{p.m_eps:.4g}", str(p.t_star),
                      f"{p.alpha_star:.3e}", f"{p.lambda_n:.3e}", str(p.t_weight_decay))
    console.print(table)
    if out:
        target = Path(out) / "schedule.csv"
        write_text(str(target), export_schedule_csv(params))
        console.print(f"[green]Wrote {target}[/green]")


@cli.command()
@common_options
@click.option('--only', multiple=True, help='Run only the named check (repeatable)')
@handle_errors
def verify(config_path, seed, workers, quick, out, only):
    """Run the numerical self-checks; exit 1 on any failure."""
    from smoothreg.harness.verify import CHECKS, run_verify

    config = _load(config_path, seed, workers, quick, out)
    names = [name for name, _ in CHECKS if not only or name in only]
    table = Table(box=box.ROUNDED, title="Verification")
    table.add_column("Check", style="bold")
    table.add_column("Result", justify="center")
    table.add_column("Time", justify="right", style="dim")
    table.add_column("Detail", max_width=70)

    def on_check(result):
        mark = "[green]pass[/green]" if result.passed else "[red]FAIL[/red]"
        table.add_row(result.name, mark, f"{result.seconds:.1f}s", result.detail)

    with console.status(f"[bold blue]Running {len(names)} checks..."):
        report = run_verify(config.verify, config.master_seed, tuple(only), on_check, raise_on_failure=False)
    console.print(table)
    if not report.passed:
        console.print(f"[red bold]{len(report.failures)} check(s) failed[/red bold]")
        sys.exit(1)
    console.print("[green bold]All checks passed[/green bold]")


@cli.command()
@common_options
@click.option('--learner', type=click.Choice(['mlp', 'kernel_gd']), help='Learner to run')
@click.option('--dim', 'D', default=1, type=click.IntRange(1, 3))
@click.option('--noise-type', type=click.Choice(['G', 'L', 'N']), default='G')
@click.option('--regularizer', type=click.Choice(['early_stop', 'weight_decay']), default='early_stop')
@click.option('--n', 'n', default=200, type=click.IntRange(min=2))
@click.option('--sigma', default=0.1, type=click.FloatRange(min=0.0))
@click.option('--rep', default=0, type=click.IntRange(min=0), help='Seed index within the grid')
@handle_errors
def simulate(config_path, seed, workers, quick, out, learner, D, noise_type, regularizer, n, sigma, rep):
    """Train one grid cell and dump its dataset, Gram, fit or training curves."""
    from smoothreg.export import (
        export_dataset_csv,
        export_fit_json,
        export_gram,
        export_mlp_snapshot,
        export_results_csv,
        export_training_curve_csv,
        write_text,
    )
    from smoothreg.harness.runner import simulate as run_simulation

    config = _load(config_path, seed, workers, quick, out, learner)
    out_dir = _out_dir(config)
    started = time.perf_counter()
    sigma = 0.0 if noise_type == "N" else sigma
    with console.status(f"[bold blue]Training {config.learner} on D={D}, {noise_type}, n={n}, sigma={sigma}..."):
        sim = run_simulation(config, D, noise_type, regularizer, n, sigma, rep)

    stem = f"{config.learner}_D{D}_{noise_type}_{regularizer}_n{n}_s{sigma:g}_r{rep}"
    write_text(str(out_dir / f"{stem}_dataset.csv"), export_dataset_csv(sim.dataset))
    write_text(str(out_dir / f"{stem}_row.csv"), export_results_csv([sim.row]))
    if sim.fit is not None:
        export_gram(sim.gram.gram, str(out_dir / f"{stem}_gram.npy"))
        write_text(str(out_dir / f"{stem}_fit.json"),
                   export_fit_json(sim.fit, seed=config.master_seed,
                                   extra={"kernel": sim.gram.kernel.to_dict(), "noise": sim.gram.noise_spec.to_dict()}))
    if sim.training is not None:
        write_text(str(out_dir / f"{stem}_curve.csv"), export_training_curve_csv(sim.training))
        export_mlp_snapshot(sim.training.model, str(out_dir / f"{stem}_mlp.npz"), sim.training.noise_used)
    _write_manifest(out_dir, f"{stem}_manifest.json", "simulate", config, started,
                    extra={"cell": list(sim.row.key)})

    console.print(Panel(
        f"[bold]Test L2:[/bold]       {sim.row.test_l2:.4e}\n"
        f"[bold]Validation L2:[/bold] {sim.row.val_l2:.4e}\n"
        f"[bold]Stopped at:[/bold]    {sim.row.t_used}\n"
        f"[bold]Artifacts:[/bold]     {out_dir / stem}_*",
        title="Simulation", border_style="blue"))


@cli.command()
@click.option('--designs', default=None, type=click.IntRange(min=1), help='Random designs per case (default: recorded set)')
@click.option('--n', 'n', default=None, type=click.IntRange(min=2), help='Points per design (default: recorded set)')
@click.option('--seed', default=None, type=click.IntRange(min=0), help='Calibration seed (default: recorded set)')
@click.option('--write', is_flag=True, help='Freeze the new constants into the constants file')
@handle_errors
def calibrate(designs, n, seed, write):
    """Recompute the eigenvalue-floor constants from seeded random designs."""
    from smoothreg.smoothing import (
        FloorCalibration,
        calibrate_floor_constants,
        eigen_floor_constants,
        freeze_floor_constants,
        load_floor_calibration,
        save_floor_constants,
    )

    recorded = load_floor_calibration()
    seed = recorded.seed if seed is None else seed
    designs = recorded.designs if designs is None else designs
    n = recorded.points if n is None else n
    with console.status(f"[bold blue]Calibrating over {designs} designs per case (seed {seed})..."):
        ratios = calibrate_floor_constants(seed, designs, n)
        if recorded.constants:
            frozen = recorded.constants
        elif (seed, designs, n) == (recorded.seed, recorded.designs, recorded.points):
            frozen = freeze_floor_constants(ratios)
        else:
            frozen = eigen_floor_constants()
    table = Table(box=box.ROUNDED, title="Eigenvalue floor constants")
    table.add_column("Case", style="bold")
    table.add_column("Min observed ratio", justify="right")
    table.add_column("Frozen constant", justify="right")
    table.add_column("Safe", justify="center")
    for case, ratio in ratios.items():
        safe = "[green]yes[/green]" if frozen[case] <= ratio else "[red]no[/red]"
        table.add_row(case, f"{ratio:.4e}", f"{frozen[case]:.4e}", safe)
    console.print(table)
    if write:
        path = save_floor_constants(FloorCalibration(seed, designs, n, freeze_floor_constants(ratios)))
        console.print(f"[green]Froze constants (seed {seed}, {designs} designs, n={n}) in {path}[/green]")


def _print_table1(result):
    table = Table(box=box.ROUNDED, show_lines=False, title="Mean test L2 (validation-selected sigma)")
    table.add_column("Learner", style="dim")
    table.add_column("D", justify="right")
    table.add_column("Type", justify="center")
    table.add_column("Regularizer")
    table.add_column("n", justify="right")
    table.add_column("Mean test L2", justify="right", style="bold")
    table.add_column("stderr", justify="right", style="dim")
    table.add_column("median sigma", justify="right")
    for c in result.cells:
        table.add_row(c.learner, str(c.dim), c.noise_type, c.regularizer, str(c.n),
                      f"{c.mean_test_l2:.4e}", f"{c.stderr_test_l2:.1e}", f"{c.median_sigma:.2f}")
    console.print(table)
    wins, total = result.orderings.smoothing_beats_none
    mono, mono_total = result.orderings.monotone_in_n
    console.print(f"  Gaussian smoothing beats none in [bold]{wins}/{total}[/bold] cells; "
                  f"loss falls with n in [bold]{mono}/{mono_total}[/bold] rows\n")


def _print_ucurve(result):
    table = Table(box=box.ROUNDED, title="Selected smoothing scale per size")
    table.add_column("Learner", style="dim")
    table.add_column("D", justify="right")
    table.add_column("Type", justify="center")
    table.add_column("Regularizer")
    table.add_column("n", justify="right")
    table.add_column("Interior seeds", justify="right")
    table.add_column("Median sigma", justify="right", style="bold")
    for s in result.summary:
        learner, D, code, reg, n = s.group
        table.add_row(learner, str(D), code, reg, str(n), f"{s.interior_seeds}/{s.seeds}",
                      f"{s.median_optimal_sigma:.2f}")
    console.print(table)


if __name__ == '__main__':
    cli()
