"""Unit tests for kernel gradient descent, ridge regression and the comparison audit."""
import math

import numpy as np
import pytest

from smoothreg.errors import ConfigError, InequalityViolation, StepSizeError
from smoothreg.kernel_gd import (
    FixedT,
    GdMode,
    TrainConfig,
    ValidationEarlyStop,
    audit_scalar_sweep,
    augmented_loss,
    comparison_audit,
    error_decomposition,
    evaluate_augmented,
    expected_gd_fitted,
    gd_coefficients,
    gd_fit,
    krr_fit,
    predict,
    predict_many,
    risk_comparison,
)
from smoothreg.kernels import KernelSpec
from smoothreg.noise import NoiseSpec
from smoothreg.smoothing import SmoothedGram, build_gram


@pytest.fixture
def kspec():
    return KernelSpec.matern(1.0, 1.0 / math.sqrt(2.0), 1)


@pytest.fixture
def diag_gram(kspec):
    return SmoothedGram.from_matrix([[0.0], [1.0]], np.diag([1.0, 0.25]), kspec, NoiseSpec.none(1))


@pytest.fixture
def smoothed(kspec):
    rng = np.random.default_rng(11)
    points = np.linspace(0.0, 1.0, 20)[:, None]
    gram = build_gram(kspec, NoiseSpec.gaussian(0.1, 1), 32, points, rng, workers=1)
    y = np.sin(2.0 * math.pi * points[:, 0]) + 0.1 * rng.standard_normal(20)
    return gram, y


def fixed(beta, t, alpha=0.0, mode=GdMode.CLOSED_FORM):
    return TrainConfig(beta, alpha, t, FixedT(t), mode=mode)


def test_single_point_one_step(kspec):
    gram = SmoothedGram.from_matrix([[0.0]], [[1.0]], kspec, NoiseSpec.none(1))
    fit = gd_fit(gram, [1.0], fixed(0.5, 1))
    assert fit.fitted_values[0] == pytest.approx(0.5, rel=1e-15)


def test_zero_iterations_gives_zero(diag_gram):
    fit = gd_fit(diag_gram, [1.0, -2.0], fixed(0.5, 0))
    assert np.array_equal(fit.fitted_values, np.zeros(2))
    assert np.array_equal(fit.w, np.zeros(2))


@pytest.mark.parametrize("mode", [GdMode.CLOSED_FORM, GdMode.ITERATIVE])
def test_weight_decay_diagonal_example(diag_gram, mode):
    fit = gd_fit(diag_gram, [1.0, 1.0], fixed(0.5, 3, alpha=0.1, mode=mode))
    assert fit.fitted_values == pytest.approx([0.78, 0.296953125], rel=1e-12)


def test_gd_coefficients_without_decay():
    assert gd_coefficients([1.0, 0.5], 0.5, 0.0, 2) == pytest.approx([0.75, 0.4375])


def test_step_size_rejected(diag_gram):
    with pytest.raises(StepSizeError):
        gd_fit(diag_gram, [1.0, 1.0], fixed(0.95, 3, alpha=0.05))
    with pytest.raises(StepSizeError):
        gd_fit(diag_gram, [1.0, 1.0], fixed(1.0, 3))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(0.0)
    with pytest.raises(ConfigError):
        TrainConfig(0.1, alpha=-1.0)
    with pytest.raises(ConfigError):
        FixedT(-1)
    with pytest.raises(ConfigError):
        ValidationEarlyStop(check_every=0)


def test_train_config_dict_roundtrip():
    cfg = TrainConfig(0.1, 0.01, 500, ValidationEarlyStop(50, 3), N=16, mode="iterative")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.mode is GdMode.ITERATIVE


def test_fitted_values_equal_gram_times_weights(smoothed):
    gram, y = smoothed
    fit = gd_fit(gram, y, fixed(0.9 / gram.eta_max, 200))
    assert np.allclose(gram.gram @ fit.w, fit.fitted_values, rtol=1e-8, atol=1e-10)


def test_iterative_matches_closed_form(smoothed):
    gram, y = smoothed
    beta = 0.9 / gram.eta_max
    for alpha in (0.0, 0.02):
        a = gd_fit(gram, y, fixed(beta, 150, alpha, GdMode.CLOSED_FORM))
        b = gd_fit(gram, y, fixed(beta, 150, alpha, GdMode.ITERATIVE))
        assert np.linalg.norm(a.fitted_values - b.fitted_values) <= 1e-8 * np.linalg.norm(a.fitted_values)
        assert a.loss_trajectory == pytest.approx(b.loss_trajectory, rel=1e-8, abs=1e-14)


def test_training_loss_decreases(smoothed):
    gram, y = smoothed
    fit = gd_fit(gram, y, fixed(0.9 / gram.eta_max, 1000))
    losses = np.array(fit.loss_trajectory)
    assert fit.trajectory_steps[0] == 0 and fit.trajectory_steps[-1] == 1000
    assert np.all(np.diff(losses) <= 1e-15)


def test_reruns_are_bit_identical(kspec):
    points = np.linspace(0.0, 1.0, 12)[:, None]
    y = np.cos(3.0 * points[:, 0])
    fits = []
    for _ in range(2):
        gram = build_gram(kspec, NoiseSpec.gaussian(0.2, 1), 16, points, np.random.default_rng(5), workers=1)
        fits.append(gd_fit(gram, y, fixed(0.5 / gram.eta_max, 300)))
    assert np.array_equal(fits[0].w, fits[1].w)


def test_predict_at_training_point(smoothed):
    gram, y = smoothed
    fit = gd_fit(gram, y, fixed(0.9 / gram.eta_max, 100))
    assert predict(gram, fit, gram.points[3]) == pytest.approx(fit.fitted_values[3], rel=1e-9, abs=1e-12)
    assert predict_many(gram, fit, gram.points[:4]).shape == (4,)


def test_two_point_interpolation(kspec):
    points = np.array([[0.0], [1.0]])
    gram = build_gram(kspec, NoiseSpec.none(1), 1, points, np.random.default_rng(0), workers=1)
    assert gram.gram[0, 1] == pytest.approx(math.exp(-1.0), rel=1e-14)
    fit = gd_fit(gram, [1.0, 1.0], fixed(0.5, 400))
    expected = 2.0 * math.exp(-0.5) / (1.0 + math.exp(-1.0))
    assert predict(gram, fit, [0.5]) == pytest.approx(expected, rel=1e-10)


def test_validation_early_stop(smoothed, kspec):
    gram, y = smoothed
    X_val = np.linspace(0.025, 0.975, 10)[:, None]
    y_val = np.sin(2.0 * math.pi * X_val[:, 0])
    rule = ValidationEarlyStop(check_every=25, patience=4)
    cfg = TrainConfig(0.9 / gram.eta_max, 0.0, 2000, rule)
    fit = gd_fit(gram, y, cfg, validation=(X_val, y_val))
    assert fit.t_used % 25 == 0
    assert fit.t_used <= 2000
    assert fit.val_trajectory[0][0] == 0
    best = min(v for _, v in fit.val_trajectory)
    assert dict(fit.val_trajectory)[fit.t_used] == best

    iterative = gd_fit(gram, y, TrainConfig(0.9 / gram.eta_max, 0.0, 2000, rule, mode="iterative"),
                       validation=(X_val, y_val))
    assert iterative.t_used == fit.t_used


def test_validation_early_stop_requires_validation(smoothed):
    gram, y = smoothed
    with pytest.raises(ConfigError):
        gd_fit(gram, y, TrainConfig(0.5 / gram.eta_max, stop_rule=ValidationEarlyStop()))


def test_krr_limits(smoothed):
    gram, y = smoothed
    assert np.allclose(krr_fit(gram, y, 1e9).fitted_values, 0.0, atol=1e-6)
    assert np.allclose(krr_fit(gram, y, 1e-14).fitted_values, y, atol=1e-4)


def test_krr_diagonal_example(diag_gram):
    fit = krr_fit(diag_gram, [1.0, 1.0], 0.25)
    assert fit.fitted_values == pytest.approx([2.0 / 3.0, 1.0 / 3.0], rel=1e-14)
    with pytest.raises(ConfigError):
        krr_fit(diag_gram, [1.0, 1.0], 0.0)


def test_expected_gd_fitted_matches_fit(smoothed):
    gram, y = smoothed
    beta = 0.5 / gram.eta_max
    assert np.allclose(expected_gd_fitted(gram, y, beta, 0.0, 50),
                       gd_fit(gram, y, fixed(beta, 50)).fitted_values, rtol=1e-12, atol=1e-14)


def test_error_decomposition_triangle():
    rng = np.random.default_rng(1)
    parts = error_decomposition(rng.normal(size=30), rng.normal(size=30), rng.normal(size=30))
    assert parts.triangle_holds
    zero = error_decomposition(np.ones(3), np.ones(3), np.ones(3))
    assert zero.total == zero.augmentation == zero.expected == 0.0


def test_audit_zero_eigenvalue():
    report = audit_scalar_sweep([0.0], [1, 10, 1000], 0.5)
    assert report.violations == 0


def test_audit_boundary_step():
    # beta * eta = 1 at t = 1 makes the second inequality an equality.
    report = audit_scalar_sweep([2.0], [1], 0.5)
    assert report.passed
    assert report.max_slack_ii == pytest.approx(0.0, abs=1e-12)


def test_audit_full_sweep():
    eta = np.logspace(-6.0, 2.0, 200)
    t = np.unique(np.round(np.logspace(0.0, 5.0, 60)).astype(int))
    report = audit_scalar_sweep(eta, t, 1.0 / eta.max())
    assert report.passed
    assert report.checked == len(eta) * len(t)


def test_audit_rejects_large_step():
    with pytest.raises(StepSizeError):
        audit_scalar_sweep([1.0], [1], 1.5)


def test_comparison_audit_on_gram(smoothed):
    gram, y = smoothed
    beta = 0.9 / gram.eta_max
    for t in (1, 10, 100, 1000):
        report = comparison_audit(gram, y, beta, t)
        assert report.passed
        assert report.rkhs_gd <= 4.0 * report.rkhs_krr * (1.0 + 1e-12)
        assert risk_comparison(gram, np.sin(2.0 * math.pi * gram.points[:, 0]), 0.01, beta, t).bound_holds


def test_comparison_audit_arguments(smoothed):
    gram, y = smoothed
    with pytest.raises(ConfigError):
        comparison_audit(gram, y, 0.5 / gram.eta_max, 0)
    with pytest.raises(StepSizeError):
        comparison_audit(gram, y, 2.0 / gram.eta_max, 5)


def test_augmented_loss_gap_identity():
    a = 0.3
    points = np.array([[0.0], [0.5], [1.0]])
    h_values = evaluate_augmented(lambda X: X[:, 0], points, [[a], [-a]])
    loss_avg, loss_aug, gap = augmented_loss(points, points[:, 0], h_values)
    assert loss_avg == pytest.approx(0.0, abs=1e-15)
    assert gap == pytest.approx(a * a / 2.0, rel=1e-12)
    assert loss_aug - loss_avg == pytest.approx(gap, rel=1e-12)


def test_augmented_loss_degenerate_cases():
    points = np.zeros((2, 1))
    y = np.array([1.0, 2.0])
    loss_avg, loss_aug, gap = augmented_loss(points, y, np.full((2, 5), 0.7))
    assert gap == 0.0
    assert loss_avg == pytest.approx(loss_aug, rel=1e-12)
    assert augmented_loss(points, y, np.array([[0.1], [0.2]]))[2] == 0.0


def test_augmented_loss_matches_pairwise_double_sum():
    rng = np.random.default_rng(5)
    h = rng.standard_normal((6, 9))
    y = rng.standard_normal(6)
    pairwise = sum(np.sum((row[:, None] - row[None, :]) ** 2) / (2.0 * 9 * 9) for row in h) / 12.0
    assert augmented_loss(np.zeros((6, 1)), y, h)[2] == pytest.approx(pairwise, rel=1e-12)


def test_augmented_loss_memory_is_linear_in_augmentations():
    import tracemalloc

    rng = np.random.default_rng(0)
    h = rng.standard_normal((20, 1000))
    y = rng.standard_normal(20)
    tracemalloc.start()
    try:
        loss_avg, loss_aug, gap = augmented_loss(np.zeros((20, 1)), y, h)
        peak = tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()
    assert peak < 10e6
    assert loss_aug - loss_avg == pytest.approx(gap, rel=1e-9)


def test_augmented_loss_evaluates_h_on_the_gram_noise(smoothed):
    gram, y = smoothed
    h = lambda X: np.sin(3.0 * X[:, 0])
    from_gram = augmented_loss(gram, y, h)
    explicit = augmented_loss(gram.points, y, evaluate_augmented(h, gram.points, gram.noise_used))
    assert from_gram == pytest.approx(explicit, rel=1e-12)
    assert from_gram[2] > 0.0


def test_augmented_loss_argument_errors():
    with pytest.raises(ConfigError):
        augmented_loss(np.zeros((3, 1)), np.zeros(2), np.zeros((2, 4)))
    with pytest.raises(ConfigError):
        augmented_loss(np.zeros((2, 1)), np.zeros(2), lambda X: X[:, 0])


def test_augmented_loss_raises_when_gap_disagrees(monkeypatch):
    from smoothreg import kernel_gd

    monkeypatch.setattr(kernel_gd.math, "isclose", lambda *args, **kwargs: False)
    with pytest.raises(InequalityViolation):
        augmented_loss(np.zeros((2, 1)), np.array([1.0, 2.0]), np.array([[0.0, 1.0], [2.0, 3.0]]))
