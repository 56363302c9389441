"""Tests for result-row aggregation into tables and U-curves."""
import pytest

from smoothreg.harness.rows import (
    OrderingReport,
    ResultRow,
    select_by_validation,
    table1_cells,
    UCurveSummary,
    table1_orderings,
    ucurve_gates,
    ucurve_points,
    ucurve_summary,
)


def row(sigma, seed, test, val, code="G", n=50):
    return ResultRow("kernel_gd", 1, code, "early_stop", n, sigma, seed, test, val, 100)


@pytest.fixture
def rows():
    return [
        row(0.0, 0, 0.50, 0.40), row(0.1, 0, 0.30, 0.20), row(0.2, 0, 0.35, 0.30),
        row(0.0, 1, 0.60, 0.50), row(0.1, 1, 0.45, 0.35), row(0.2, 1, 0.20, 0.10),
    ]


def test_row_keys():
    r = row(0.1, 3, 0.2, 0.3)
    assert r.key == ("kernel_gd", 1, "G", "early_stop", 50, 0.1, 3)
    assert r.group == ("kernel_gd", 1, "G", "early_stop", 50)


def test_select_by_validation(rows):
    best = select_by_validation(rows)
    assert best[("kernel_gd", 1, "G", "early_stop", 50, 0)].sigma == 0.1
    assert best[("kernel_gd", 1, "G", "early_stop", 50, 1)].sigma == 0.2


def test_select_ties_go_to_smaller_sigma():
    best = select_by_validation([row(0.3, 0, 1.0, 0.2), row(0.1, 0, 2.0, 0.2)])
    assert list(best.values())[0].sigma == 0.1


def test_table1_cells(rows):
    (cell,) = table1_cells(rows)
    assert cell.mean_test_l2 == pytest.approx(0.25)
    assert cell.stderr_test_l2 == pytest.approx(0.05)
    assert cell.median_sigma == pytest.approx(0.15)
    assert cell.seeds == 2


def test_single_seed_has_zero_stderr():
    (cell,) = table1_cells([row(0.1, 0, 0.3, 0.2)])
    assert cell.stderr_test_l2 == 0.0


def test_ucurve_points(rows):
    points = ucurve_points(rows)
    assert [p.sigma for p in points] == [0.0, 0.1, 0.2]
    assert [p.selected for p in points] == [False, False, True]
    assert points[1].mean_test_l2 == pytest.approx(0.375)
    assert points[0].mean_val_l2 == pytest.approx(0.45)


def test_ucurve_summary(rows):
    (summary,) = ucurve_summary(rows, (0.0, 0.1, 0.2))
    assert summary.interior_seeds == 1
    assert summary.interior_fraction == pytest.approx(0.5)
    assert summary.median_optimal_sigma == pytest.approx(0.15)


def test_table1_orderings():
    rows = [row(0.1, 0, 0.2, 0.1, "G", 50), row(0.0, 0, 0.4, 0.3, "N", 50),
            row(0.1, 0, 0.1, 0.1, "G", 200), row(0.0, 0, 0.05, 0.3, "N", 200)]
    report = table1_orderings(table1_cells(rows))
    assert report.smoothing_beats_none == (1, 2)
    assert report.monotone_in_n == (2, 2)
    assert report.relative_gains[("kernel_gd", 1, "early_stop", 50)] == pytest.approx(0.5)
    assert report.passed is False
    assert report.large_gains == (0, 1)


def grid_cells(g_losses, n_losses):
    rows = []
    for dim, (g50, g200) in enumerate(g_losses, start=1):
        rows += [ResultRow("mlp", dim, "G", "early_stop", 50, 0.1, 0, g50, 0.1, 10),
                 ResultRow("mlp", dim, "G", "early_stop", 200, 0.1, 0, g200, 0.1, 10)]
    for dim, (n50, n200) in enumerate(n_losses, start=1):
        rows += [ResultRow("mlp", dim, "N", "early_stop", 50, 0.0, 0, n50, 0.1, 10),
                 ResultRow("mlp", dim, "N", "early_stop", 200, 0.0, 0, n200, 0.1, 10)]
    return table1_cells(rows)


def test_orderings_pass_when_smoothing_wins():
    report = table1_orderings(grid_cells([(0.5, 0.2)] * 3, [(0.8, 0.4)] * 3))
    assert report.smoothing_beats_none == (6, 6)
    assert report.monotone_in_n == (6, 6)
    assert report.large_gains == (3, 3)
    assert report.passed
    assert report.failures == []


def test_orderings_fail_when_smoothing_loses():
    report = table1_orderings(grid_cells([(0.9, 0.5)] * 3, [(0.8, 0.4)] * 3))
    assert report.smoothing_beats_none == (0, 6)
    assert not report.passed
    assert any("smoothing beats none in 0/6" in f for f in report.failures)


def test_orderings_fail_when_loss_grows_with_n():
    report = table1_orderings(grid_cells([(0.2, 0.5)] * 3, [(0.4, 0.8)] * 3))
    assert report.monotone_in_n == (0, 6)
    assert any("loss falls with n" in f for f in report.failures)


def test_win_threshold_is_fractional():
    assert OrderingReport((14, 18), (16, 18), {}, (2, 3)).passed
    assert not OrderingReport((13, 18), (16, 18), {}, (2, 3)).passed
    assert not OrderingReport((14, 18), (15, 18), {}, (2, 3)).passed
    assert not OrderingReport((14, 18), (16, 18), {}, (1, 3)).passed


def summary(n, interior, seeds, median, dim=1):
    return UCurveSummary(("mlp", dim, "G", "early_stop", n), interior / seeds, interior, seeds, median)


def test_ucurve_gates_pass():
    gates = ucurve_gates([summary(50, 4, 15, 0.3), summary(200, 10, 15, 0.2)])
    assert gates.interior == (1, 1)
    assert gates.decreasing == (1, 1)
    assert gates.passed


def test_ucurve_gates_fail_on_boundary_minimizers():
    gates = ucurve_gates([summary(50, 15, 15, 0.3), summary(200, 9, 15, 0.2)])
    assert gates.interior == (0, 1)
    assert not gates.passed
    assert "9/15" in gates.failures[0]


def test_ucurve_gates_fail_when_optimal_sigma_grows():
    gates = ucurve_gates([summary(50, 12, 15, 0.1), summary(200, 12, 15, 0.25)])
    assert gates.decreasing == (0, 1)
    assert not gates.passed


def test_ucurve_gates_only_look_at_one_dimension():
    gates = ucurve_gates([summary(200, 0, 15, 0.5, dim=2)])
    assert gates.interior == (0, 0)
    assert gates.passed
