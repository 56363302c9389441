"""Unit tests for smoothing kernels, smoothed Grams and their diagnostics."""
import math

import numpy as np
import pytest

from smoothreg import smoothing
from smoothreg.errors import ConfigError, DuplicatePointsError
from smoothreg.kernels import KernelSpec, gram_matrix, kernel_eval, kernel_values
from smoothreg.noise import NoiseSpec, sample
from smoothreg.smoothing import (
    FloorCalibration,
    _pair_mean,
    augmentation_condition,
    build_gram,
    calibrate_floor_constants,
    calibration_designs,
    check_eigen_floor,
    eigen_floor_bound,
    eigen_floor_constants,
    empirical_kernel_values,
    empirical_smoothing_kernel,
    expected_gram,
    expected_kernel_detail,
    expected_smoothing_kernel,
    floor_calibration_cases,
    floor_case,
    lemma_radius,
    load_floor_calibration,
    random_design,
    save_floor_constants,
    separation_distance,
    sup_gap_estimate,
)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture
def matern():
    return KernelSpec.matern(1.5, 1.0, 1)


def test_single_draw_reproduces_kernel(matern):
    assert empirical_smoothing_kernel(matern, [[0.37]], [0.4]) == pytest.approx(kernel_eval(matern, [0.4]), rel=1e-12)
    assert empirical_smoothing_kernel(matern, np.zeros((7, 1)), [0.4]) == pytest.approx(
        kernel_eval(matern, [0.4]), rel=1e-12)


def test_empirical_gaussian_near_expected(rng):
    kspec = KernelSpec.gaussian(0.5, 1)
    nspec = NoiseSpec.gaussian(0.3, 1)
    noise = sample(nspec, 2000, rng)
    empirical = empirical_smoothing_kernel(kspec, noise, [0.5])
    expected = expected_smoothing_kernel(kspec, nspec, [0.5])
    assert abs(empirical - expected) < 0.03


def test_fast_path_matches_direct_mean(rng):
    for m0, phi in ((1.0, 1.0), (2.0, 0.7), (3.0, 1.2)):
        kspec = KernelSpec.matern(m0, phi, 1)
        a = rng.normal(0.2, 0.3, size=(300, 1))
        b = rng.normal(0.0, 0.3, size=(280, 1))
        direct = kernel_values(kspec, (a[:, None, :] - b[None, :, :]).reshape(-1, 1)).mean()
        assert _pair_mean(kspec, a, b) == pytest.approx(direct, rel=1e-9)


def test_expected_kernel_without_noise_is_kernel(matern):
    assert expected_smoothing_kernel(matern, NoiseSpec.none(1), [0.3]) == kernel_eval(matern, [0.3])


def test_gaussian_closed_form_and_quadrature_agree():
    kspec = KernelSpec.gaussian(0.5, 1)
    nspec = NoiseSpec.gaussian(0.3, 1)
    closed = expected_kernel_detail(kspec, nspec, [0.0], method="closed_form")
    assert closed.method == "closed_form"
    assert closed.value == pytest.approx(math.sqrt(0.25 / 0.34), rel=1e-14)
    for d in (0.0, 0.4, 1.2):
        quad = expected_smoothing_kernel(kspec, nspec, [d], method="quadrature")
        assert quad == pytest.approx(expected_smoothing_kernel(kspec, nspec, [d]), rel=1e-6)


def test_gaussian_closed_form_monte_carlo(rng):
    kspec = KernelSpec.gaussian(0.5, 2)
    nspec = NoiseSpec.gaussian(0.3, 2)
    d = [0.2, -0.1]
    mc = expected_kernel_detail(kspec, nspec, d, method="monte_carlo", rng=rng, mc_draws=100_000)
    exact = expected_smoothing_kernel(kspec, nspec, d)
    assert abs(mc.value - exact) <= 4 * mc.stderr


def test_matern_generalized_laplace_quadrature_vs_monte_carlo(rng, matern):
    nspec = NoiseSpec.generalized_laplace(0.2, 2.0, 1)
    quad = expected_kernel_detail(matern, nspec, [0.4])
    assert quad.method == "quadrature"
    mc = expected_kernel_detail(matern, nspec, [0.4], method="monte_carlo", rng=rng, mc_draws=100_000)
    assert abs(mc.value - quad.value) <= 4 * mc.stderr


def test_expected_kernel_smaller_than_kernel_at_origin(matern):
    value = expected_smoothing_kernel(matern, NoiseSpec.gaussian(0.3, 1), [0.0])
    assert 0.0 < value < 1.0


def test_closed_form_requires_gaussian_pair(matern):
    with pytest.raises(ConfigError):
        expected_kernel_detail(matern, NoiseSpec.gaussian(0.3, 1), [0.0], method="closed_form")


def test_single_point_gram(rng, matern):
    gram = build_gram(matern, NoiseSpec.gaussian(0.2, 1), 50, [[0.3]], rng, workers=1)
    assert gram.gram.shape == (1, 1)
    assert gram.gram[0, 0] <= kernel_eval(matern, [0.0])


def test_unsmoothed_gram_is_plain_gram(rng, matern):
    points = np.array([[0.0], [0.5], [1.0]])
    gram = build_gram(matern, NoiseSpec.none(1), 1, points, rng, workers=1)
    assert np.allclose(gram.gram, gram_matrix(matern, points), rtol=0, atol=1e-15)
    assert np.array_equal(gram.gram, gram.gram.T)


def test_gram_invariants(rng):
    kspec = KernelSpec.matern(2.5, 1.0, 2)
    points = rng.uniform(size=(25, 2))
    gram = build_gram(kspec, NoiseSpec.gaussian(0.1, 2), 40, points, rng, workers=2)
    assert np.array_equal(gram.gram, gram.gram.T)
    assert gram.eta_min >= -1e-10 * gram.eta_max
    assert gram.reconstruction_error() <= 1e-9
    assert np.all(np.diff(gram.eigenvalues) <= 0)


def test_fast_path_gram_matches_generic(rng):
    kspec = KernelSpec.matern(2.0, 1.0, 1)
    nspec = NoiseSpec.gaussian(0.1, 1)
    points = np.linspace(0.0, 1.0, 6)[:, None]
    fast = build_gram(kspec, nspec, 256, points, np.random.default_rng(3), workers=1)
    noise = fast.noise_used
    aug = points[:, None, :] + noise[None, :, :]
    direct = np.array([[kernel_values(kspec, (aug[j][:, None, :] - aug[k][None, :, :]).reshape(-1, 1)).mean()
                        for k in range(6)] for j in range(6)])
    assert np.allclose(fast.gram, direct, rtol=1e-9, atol=1e-12)


def test_duplicate_points_rejected(rng, matern):
    with pytest.raises(DuplicatePointsError):
        build_gram(matern, NoiseSpec.gaussian(0.1, 1), 4, [[0.2], [0.2]], rng)


def test_cross_kernel_at_training_points(rng, matern):
    points = np.linspace(0.0, 1.0, 8)[:, None]
    gram = build_gram(matern, NoiseSpec.gaussian(0.1, 1), 16, points, rng, workers=1)
    assert np.allclose(gram.cross_kernel(points), gram.gram, rtol=1e-12, atol=1e-14)


def test_per_point_noise_gram(rng, matern):
    points = np.linspace(0.0, 1.0, 5)[:, None]
    gram = build_gram(matern, NoiseSpec.gaussian(0.1, 1), 12, points, rng, shared=False, workers=1)
    assert gram.noise_used.shape == (5, 12, 1)
    assert np.array_equal(gram.gram, gram.gram.T)
    assert gram.cross_kernel(points[:2]).shape == (2, 5)


def test_expected_gram_symmetric(matern):
    points = np.array([[0.0], [0.3], [0.9]])
    K = expected_gram(matern, NoiseSpec.gaussian(0.1, 1), points)
    assert np.array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() > 0


def test_expected_gram_monte_carlo_draws_fresh_noise_per_entry(matern):
    points = np.array([[0.0], [0.5], [1.0]])
    nspec = NoiseSpec.gaussian(0.2, 1)
    K = expected_gram(matern, nspec, points, method="monte_carlo", mc_draws=200)
    # equal differences, independent draws
    assert K[0, 1] != K[1, 2]
    again = expected_gram(matern, nspec, points, rng=np.random.default_rng(0), method="monte_carlo", mc_draws=200)
    assert np.array_equal(K, again)
    exact = expected_gram(matern, nspec, points)
    assert np.allclose(K, exact, atol=0.1)


def test_sup_gap_null_noise_is_zero(rng, matern):
    rows = sup_gap_estimate(matern, NoiseSpec.none(1), [1, 100], np.linspace(-1, 1, 5), 2, rng)
    assert [r.mean_gap for r in rows] == [0.0, 0.0]


def test_sup_gap_shrinks_with_draws(rng):
    kspec = KernelSpec.matern(1.0, 1.0 / math.sqrt(2.0), 1)
    rows = sup_gap_estimate(kspec, NoiseSpec.gaussian(0.3, 1), [1, 10_000], np.linspace(-1, 1, 11), 3, rng)
    assert rows[0].mean_gap > rows[1].mean_gap


@pytest.mark.slow
def test_sup_gap_rate(rng):
    kspec = KernelSpec.matern(1.0, 1.0 / math.sqrt(2.0), 1)
    rows = sup_gap_estimate(kspec, NoiseSpec.gaussian(0.3, 1), [100, 1000, 10_000, 100_000],
                            np.linspace(-1, 1, 21), 5, rng)
    slope = np.polyfit(np.log([r.n_aug for r in rows]), np.log([r.mean_gap for r in rows]), 1)[0]
    assert -0.65 <= slope <= -0.35


def test_sup_gap_requires_grids(rng, matern):
    with pytest.raises(ConfigError):
        sup_gap_estimate(matern, NoiseSpec.gaussian(0.3, 1), [], [0.0], 1, rng)


def test_augmentation_condition_minimal_count():
    holds, minimal = augmentation_condition(eta_min_expected=2.0, n=10, N=10)
    assert not holds
    assert minimal > 10
    lhs = lambda N: 10 * math.sqrt(math.log(N) / N)
    assert lhs(minimal) <= 1.0 < lhs(minimal - 1)
    assert augmentation_condition(2.0, 10, minimal)[0]


def test_separation_distance():
    assert separation_distance([[0.0], [0.4], [1.0]]) == pytest.approx(0.2)
    assert separation_distance([[0.0]]) == math.inf


def test_lemma_radius_one_dimension():
    # (pi Gamma(3/2)^2 / 9)^(1/2) = pi / 6
    assert lemma_radius(0.5, 1) == pytest.approx(4.0 * math.pi, rel=1e-14)


def test_floor_cases():
    assert floor_case(KernelSpec.matern(1.5, 1.0, 1), NoiseSpec.gaussian(0.1, 1)) == "C3"
    assert floor_case(KernelSpec.matern(1.5, 1.0, 1), NoiseSpec.generalized_laplace(0.1, 1.0, 1)) == "C1"
    tensor = KernelSpec.tensor([KernelSpec.matern(1.0, 1.0, 1)] * 2)
    assert floor_case(tensor, NoiseSpec.tensor_laplace(0.1, 1.0, 2)) == "C2"


def test_eigen_floor_bound_decreases_with_separation():
    kspec = KernelSpec.matern(1.0, 1.0, 1)
    nspec = NoiseSpec.generalized_laplace(0.05, 1.0, 1)
    wide = eigen_floor_bound(kspec, nspec, 0.1, constant=1.0)
    assert wide > eigen_floor_bound(kspec, nspec, 0.02, constant=1.0) > 0.0
    assert eigen_floor_bound(kspec, nspec, 0.1, constant=2.0) == pytest.approx(2.0 * wide)


def test_calibration_designs_extend_as_a_prefix():
    short = list(calibration_designs(11, 0, 1, 10, 3))
    long = list(calibration_designs(11, 0, 1, 10, 5))
    for a, b in zip(short, long):
        np.testing.assert_array_equal(a, b)
    other_case = next(calibration_designs(11, 1, 1, 10, 1))
    assert not np.array_equal(other_case, short[0])
    assert all(separation_distance(p) >= 0.01 for p in long)


def test_calibrate_floor_constants_shrinks_with_more_designs():
    short = calibrate_floor_constants(5, designs=1, n=5)
    again = calibrate_floor_constants(5, designs=1, n=5)
    longer = calibrate_floor_constants(5, designs=2, n=5)
    assert short == again
    assert set(short) == {"C1", "C2", "C3"}
    for case in short:
        assert longer[case] <= short[case]


def test_eigen_floor_constants_read_frozen_values(tmp_path, monkeypatch):
    def refuse(*args, **kwargs):
        raise AssertionError("frozen constants must not be recalibrated")

    monkeypatch.setattr(smoothing, "calibrate_floor_constants", refuse)
    path = save_floor_constants(FloorCalibration(7, 4, 6, {"C1": 2.5, "C2": 0.25, "C3": 0.0}),
                                tmp_path / "floor.yaml")
    recorded = load_floor_calibration(path)
    assert (recorded.seed, recorded.designs, recorded.points) == (7, 4, 6)
    assert eigen_floor_constants(path) == {"C1": 2.5, "C2": 0.25, "C3": 0.0}


def test_eigen_floor_constants_calibrate_the_recorded_set_once(tmp_path, monkeypatch):
    calls = []

    def fake(seed, designs, n):
        calls.append((seed, designs, n))
        return {"C1": 3.0, "C2": math.inf, "C3": 1.5}

    monkeypatch.setattr(smoothing, "calibrate_floor_constants", fake)
    path = tmp_path / "floor.yaml"
    path.write_text("calibration:\n  seed: 9\n  designs: 12\n  points: 8\nconstants: {}\n")
    assert eigen_floor_constants(path) == {"C1": 3.0, "C2": 0.0, "C3": 1.5}
    assert eigen_floor_constants(path) == {"C1": 3.0, "C2": 0.0, "C3": 1.5}
    assert calls == [(9, 12, 8)]


def test_load_floor_calibration_rejects_missing_record(tmp_path):
    path = tmp_path / "floor.yaml"
    path.write_text("constants:\n  C1: 1.0\n")
    with pytest.raises(ConfigError):
        load_floor_calibration(path)


def test_shipped_floor_calibration_record():
    recorded = load_floor_calibration()
    assert recorded.designs == 100
    assert recorded.points == 10
    assert recorded.seed >= 0


@pytest.mark.slow
def test_frozen_floor_constants_do_not_exceed_a_calibration_rerun():
    recorded = load_floor_calibration()
    rerun = calibrate_floor_constants(recorded.seed, designs=5, n=recorded.points)
    for case, constant in eigen_floor_constants().items():
        assert constant <= rerun[case]


@pytest.mark.slow
def test_frozen_floor_holds_on_calibration_designs():
    recorded = load_floor_calibration()
    for index, (case, (kspec, nspec)) in enumerate(floor_calibration_cases().items()):
        for points in calibration_designs(recorded.seed, index, kspec.dim, recorded.points, 3):
            check = check_eigen_floor(kspec, nspec, points, epsabs=1e-14)
            assert check.case == case
            assert check.passed


@pytest.mark.slow
def test_eigen_floor_holds_gaussian_case(rng):
    kspec = KernelSpec.matern(1.5, 1.0, 1)
    points = random_design(1, 10, rng)
    check = check_eigen_floor(kspec, NoiseSpec.gaussian(0.1, 1), points)
    assert check.case == "C3"
    assert check.passed
    assert check.eta_min > 0
