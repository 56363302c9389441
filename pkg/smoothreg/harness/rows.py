"""Result rows and their aggregation into Table-1 cells and U-curves."""
import math
from collections import defaultdict
from dataclasses import astuple, dataclass
from typing import Dict, Iterable, List, Tuple

import numpy as np


@dataclass(frozen=True)
class ResultRow:
    """One trained model: a single (learner, D, type, regularizer, n, sigma, seed) cell."""
    learner: str
    dim: int
    noise_type: str
    regularizer: str
    n: int
    sigma: float
    seed: int
    test_l2: float
    val_l2: float
    t_used: int

    @property
    def key(self) -> tuple:
        return astuple(self)[:7]

    @property
    def group(self) -> tuple:
        """(learner, D, type, regularizer, n): the cell before sigma selection."""
        return astuple(self)[:5]


@dataclass(frozen=True)
class Table1Cell:
    learner: str
    dim: int
    noise_type: str
    regularizer: str
    n: int
    mean_test_l2: float
    stderr_test_l2: float
    median_sigma: float
    seeds: int


@dataclass(frozen=True)
class UCurvePoint:
    learner: str
    dim: int
    noise_type: str
    regularizer: str
    n: int
    sigma: float
    mean_test_l2: float
    stderr_test_l2: float
    mean_val_l2: float
    seeds: int
    selected: bool


# Acceptance thresholds, as fractions of the cells, rows or seeds checked.
SMOOTHING_WIN_FRACTION = 14 / 18
MONOTONE_FRACTION = 16 / 18
GAIN_DIM_FRACTION = 2 / 3
MIN_RELATIVE_GAIN = 0.10
INTERIOR_FRACTION = 10 / 15


def _meets(passed: int, total: int, fraction: float) -> bool:
    return total == 0 or passed >= math.ceil(fraction * total - 1e-9)


def _stderr(values) -> float:
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(len(values)))


def select_by_validation(rows: Iterable[ResultRow]) -> Dict[tuple, ResultRow]:
    """Per (group, seed), the row with the smallest validation loss; ties go to the smaller sigma."""
    best: Dict[tuple, ResultRow] = {}
    for row in sorted(rows, key=lambda r: r.key):
        slot = (*row.group, row.seed)
        if slot not in best or row.val_l2 < best[slot].val_l2:
            best[slot] = row
    return best


def table1_cells(rows: Iterable[ResultRow]) -> List[Table1Cell]:
    """Mean test loss over seeds of the validation-selected sigma, per group."""
    grouped: Dict[tuple, List[ResultRow]] = defaultdict(list)
    for row in select_by_validation(rows).values():
        grouped[row.group].append(row)
    cells = []
    for group in sorted(grouped):
        chosen = grouped[group]
        tests = [r.test_l2 for r in chosen]
        cells.append(Table1Cell(*group, float(np.mean(tests)), _stderr(tests),
                                float(np.median([r.sigma for r in chosen])), len(chosen)))
    return cells


def ucurve_points(rows: Iterable[ResultRow]) -> List[UCurvePoint]:
    """Loss against sigma per group; ``selected`` marks the minimum mean validation loss."""
    by_sigma: Dict[tuple, Dict[float, List[ResultRow]]] = defaultdict(lambda: defaultdict(list))
    for row in rows:
        by_sigma[row.group][row.sigma].append(row)
    points = []
    for group in sorted(by_sigma):
        curve = by_sigma[group]
        means = {s: float(np.mean([r.val_l2 for r in curve[s]])) for s in sorted(curve)}
        chosen = min(means, key=lambda s: (means[s], s))
        for s in sorted(curve):
            tests = [r.test_l2 for r in curve[s]]
            points.append(UCurvePoint(*group, s, float(np.mean(tests)), _stderr(tests), means[s],
                                      len(tests), s == chosen))
    return points


@dataclass(frozen=True)
class UCurveSummary:
    group: tuple
    interior_fraction: float
    interior_seeds: int
    seeds: int
    median_optimal_sigma: float

    @property
    def interior_passed(self) -> bool:
        return _meets(self.interior_seeds, self.seeds, INTERIOR_FRACTION)


def ucurve_summary(rows: Iterable[ResultRow], sigma_grid) -> List[UCurveSummary]:
    """Per group: how many seeds select an interior sigma, and the median selected sigma."""
    lo, hi = min(sigma_grid), max(sigma_grid)
    grouped: Dict[tuple, List[float]] = defaultdict(list)
    for row in select_by_validation(rows).values():
        grouped[row.group].append(row.sigma)
    out = []
    for group in sorted(grouped):
        sigmas = grouped[group]
        interior = sum(1 for s in sigmas if lo < s < hi)
        out.append(UCurveSummary(group, interior / len(sigmas), interior, len(sigmas), float(np.median(sigmas))))
    return out


@dataclass(frozen=True)
class OrderingReport:
    """Counts of Table-1 cells whose ordering matches the expected direction.

    ``large_gains`` counts, among early-stopped cells at the largest n, the
    dimensions where smoothing cuts the unsmoothed loss by MIN_RELATIVE_GAIN.
    """
    smoothing_beats_none: Tuple[int, int]
    monotone_in_n: Tuple[int, int]
    relative_gains: Dict[tuple, float]
    large_gains: Tuple[int, int] = (0, 0)

    @property
    def failures(self) -> List[str]:
        out = []
        wins, total = self.smoothing_beats_none
        if not _meets(wins, total, SMOOTHING_WIN_FRACTION):
            out.append(f"smoothing beats none in {wins}/{total} cells, "
                       f"needs {math.ceil(SMOOTHING_WIN_FRACTION * total - 1e-9)}")
        mono, mono_total = self.monotone_in_n
        if not _meets(mono, mono_total, MONOTONE_FRACTION):
            out.append(f"loss falls with n in {mono}/{mono_total} rows, "
                       f"needs {math.ceil(MONOTONE_FRACTION * mono_total - 1e-9)}")
        gains, gain_total = self.large_gains
        if not _meets(gains, gain_total, GAIN_DIM_FRACTION):
            out.append(f"smoothing gains {MIN_RELATIVE_GAIN:.0%} in {gains}/{gain_total} dimensions, "
                       f"needs {math.ceil(GAIN_DIM_FRACTION * gain_total - 1e-9)}")
        return out

    @property
    def passed(self) -> bool:
        return not self.failures


def table1_orderings(cells: Iterable[Table1Cell], noise_code: str = "G") -> OrderingReport:
    """Compare smoothed against unsmoothed cells and the smallest against the largest n."""
    cells = list(cells)
    index = {(c.learner, c.dim, c.noise_type, c.regularizer, c.n): c for c in cells}
    wins = total = 0
    gains = {}
    for (learner, dim, code, reg, n), cell in index.items():
        if code != noise_code:
            continue
        none = index.get((learner, dim, "N", reg, n))
        if none is None:
            continue
        total += 1
        wins += cell.mean_test_l2 < none.mean_test_l2
        gains[(learner, dim, reg, n)] = 1.0 - cell.mean_test_l2 / none.mean_test_l2
    rows = defaultdict(dict)
    for (learner, dim, code, reg, n), cell in index.items():
        rows[(learner, dim, code, reg)][n] = cell.mean_test_l2
    mono = mono_total = 0
    for by_n in rows.values():
        if len(by_n) >= 2:
            mono_total += 1
            mono += by_n[max(by_n)] < by_n[min(by_n)]
    largest = max((n for (_, _, reg, n) in gains if reg == "early_stop"), default=None)
    large = [g for (_, _, reg, n), g in gains.items() if reg == "early_stop" and n == largest]
    return OrderingReport((wins, total), (mono, mono_total), gains,
                          (sum(g >= MIN_RELATIVE_GAIN for g in large), len(large)))


@dataclass(frozen=True)
class UCurveGates:
    """U-curve shape checks on the one-dimensional groups.

    ``interior`` counts groups at the largest n whose selected sigma is
    interior in enough seeds; ``decreasing`` counts (learner, type,
    regularizer) curves whose median selected sigma does not grow from the
    smallest to the largest n.
    """
    interior: Tuple[int, int]
    decreasing: Tuple[int, int]
    failures: List[str]

    @property
    def passed(self) -> bool:
        return not self.failures


def ucurve_gates(summary: Iterable[UCurveSummary], dim: int = 1) -> UCurveGates:
    by_curve: Dict[tuple, Dict[int, UCurveSummary]] = defaultdict(dict)
    for s in summary:
        learner, D, code, reg, n = s.group
        if D == dim:
            by_curve[(learner, code, reg)][n] = s
    failures = []
    interior = interior_total = decreasing = decreasing_total = 0
    for curve, by_n in sorted(by_curve.items()):
        top = by_n[max(by_n)]
        interior_total += 1
        if top.interior_passed:
            interior += 1
        else:
            failures.append(f"{curve} at n={max(by_n)}: interior sigma in {top.interior_seeds}/{top.seeds} seeds, "
                            f"needs {math.ceil(INTERIOR_FRACTION * top.seeds - 1e-9)}")
        if len(by_n) >= 2:
            decreasing_total += 1
            low = by_n[min(by_n)]
            if top.median_optimal_sigma <= low.median_optimal_sigma:
                decreasing += 1
            else:
                failures.append(f"{curve}: median sigma grows from {low.median_optimal_sigma:.2f} at n={min(by_n)} "
                                f"to {top.median_optimal_sigma:.2f} at n={max(by_n)}")
    return UCurveGates((interior, interior_total), (decreasing, decreasing_total), failures)
