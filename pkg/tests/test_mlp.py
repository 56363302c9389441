"""Unit tests for the ReLU regressor and its augmented SGD training."""
import numpy as np
import pytest

from smoothreg.errors import ConfigError, DivergenceError
from smoothreg.mlp import (
    MlpModel,
    SgdConfig,
    _averaged_loss_and_grads,
    forward,
    grad_check,
    min_preactivation_margin,
    select_weight_decay,
    smoothed_predict,
    train_augmented,
)
from smoothreg.noise import NoiseSpec


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def line_data(rng):
    X = rng.uniform(-1.0, 1.0, size=(40, 1))
    X_val = np.linspace(-0.9, 0.9, 15)[:, None]
    return X, np.sin(2.0 * X[:, 0]), X_val, np.sin(2.0 * X_val[:, 0])


def test_default_architecture(rng):
    model = MlpModel(3, rng=rng)
    assert model.widths == [3, 100, 100, 1]
    assert model.get_flat().size == 3 * 100 + 100 + 100 * 100 + 100 + 100 + 1


def test_zero_model_predicts_zero():
    model = MlpModel(2, (4, 4))
    assert forward(model, [0.3, -0.2]) == 0.0


def test_kaiming_scale(rng):
    model = MlpModel(50, (400, 10), rng=rng)
    assert model.weights[1].std() == pytest.approx(np.sqrt(2.0 / 400), rel=0.05)
    assert np.all(model.biases[0] == 0.0)


def test_forward_matches_manual_pass(rng):
    model = MlpModel(2, (3, 3), rng=rng)
    x = np.array([0.4, -0.7])
    h1 = np.maximum(model.weights[0] @ x + model.biases[0], 0.0)
    h2 = np.maximum(model.weights[1] @ h1 + model.biases[1], 0.0)
    out = (model.weights[2] @ h2 + model.biases[2]).item()
    assert model.forward(x) == pytest.approx(out, rel=1e-14)
    assert model.predict(np.stack([x, x])).shape == (2,)


def test_gradients_match_finite_differences(rng):
    model = MlpModel(2, (8, 8), rng=rng)
    for b in model.biases[:-1]:
        b[...] = rng.normal(0.0, 0.1, size=b.shape)
    x = np.array([0.3, 0.6])
    if min_preactivation_margin(model, x) < 1e-3:
        pytest.skip("point sits near a ReLU kink")
    assert grad_check(model, x, 0.5) < 1e-4


def test_averaged_loss_with_one_augmentation(rng):
    model = MlpModel(1, (6, 6), rng=rng)
    X = rng.uniform(-1.0, 1.0, size=(5, 1))
    y = rng.standard_normal(5)
    loss_a, grads_a = _averaged_loss_and_grads(model, X, y, 1)
    loss_b, grads_b = model.loss_and_grads(X, y)
    assert loss_a == pytest.approx(loss_b, rel=1e-14)
    for ga, gb in zip(grads_a, grads_b):
        assert np.allclose(ga, gb, rtol=1e-13, atol=1e-16)


def test_arrays_roundtrip(rng):
    model = MlpModel(2, (5, 4), rng=rng)
    restored = MlpModel.from_arrays(model.to_arrays())
    X = rng.uniform(size=(6, 2))
    assert np.array_equal(restored.predict(X), model.predict(X))


def test_smoothed_predict(rng):
    model = MlpModel(1, (6, 6), rng=rng)
    X = np.linspace(-1.0, 1.0, 4)[:, None]
    assert np.array_equal(smoothed_predict(model, X, None, 5), model.predict(X))
    assert np.allclose(smoothed_predict(model, X, np.zeros((5, 1)), 5), model.predict(X))
    eps = np.array([[0.1], [-0.1]])
    manual = 0.5 * (model.predict(X + 0.1) + model.predict(X - 0.1))
    assert np.allclose(smoothed_predict(model, X, eps, 2), manual)


def test_sgd_config_validation():
    with pytest.raises(ConfigError):
        SgdConfig(lr=0.0)
    with pytest.raises(ConfigError):
        SgdConfig(momentum=1.0)
    with pytest.raises(ConfigError):
        SgdConfig(batch_size=0)
    with pytest.raises(ConfigError):
        SgdConfig(loss="hinge")


def test_sgd_presets():
    early = SgdConfig.early_stopping(max_iters=10)
    assert early.weight_decay == 0.0 and early.keep_best and early.max_iters == 10
    decay = SgdConfig.with_weight_decay()
    assert decay.weight_decay == 1e-4 and decay.max_iters == 10_000 and not decay.keep_best
    assert early.to_dict()["momentum"] == 0.9


def test_training_improves_validation(line_data, rng):
    X, y, X_val, y_val = line_data
    model = MlpModel(1, (16, 16), rng=rng)
    cfg = SgdConfig(max_iters=2000, eval_every=200, seed=1)
    result = train_augmented(model, X, y, NoiseSpec.gaussian(0.05, 1), 8, cfg, (X_val, y_val), rng)
    assert result.val_curve[0][0] == 0
    assert result.best_val < result.val_curve[0][1]
    assert result.noise_used.shape == (8, 1)
    assert [it for it, _ in result.train_curve] == list(range(200, 2001, 200))


def test_keep_best_restores_snapshot(line_data, rng):
    X, y, X_val, y_val = line_data
    model = MlpModel(1, (8, 8), rng=rng)
    cfg = SgdConfig(max_iters=600, eval_every=100, keep_best=True)
    result = train_augmented(model, X, y, NoiseSpec.none(1), 1, cfg, (X_val, y_val), rng)
    val = float(np.mean((model.predict(X_val) - y_val) ** 2))
    assert val == pytest.approx(result.best_val, rel=1e-12)


def test_weight_decay_keeps_final_model(line_data, rng):
    X, y, X_val, y_val = line_data
    cfg = SgdConfig.with_weight_decay(max_iters=300, eval_every=100, loss="averaged")
    result = train_augmented(MlpModel(1, (8, 8), rng=rng), X, y, NoiseSpec.gaussian(0.1, 1), 4, cfg,
                             (X_val, y_val), rng)
    assert result.best_iter == 300


def test_training_is_reproducible(line_data):
    X, y, X_val, y_val = line_data
    flats = []
    for _ in range(2):
        rng = np.random.default_rng(3)
        model = MlpModel(1, (8, 8), rng=rng)
        train_augmented(model, X, y, NoiseSpec.gaussian(0.1, 1), 4, SgdConfig(max_iters=100), (X_val, y_val), rng)
        flats.append(model.get_flat())
    assert np.array_equal(flats[0], flats[1])


def test_divergence_detected(line_data, rng):
    X, y, _, _ = line_data
    cfg = SgdConfig(max_iters=50, divergence_threshold=1.0)
    with pytest.raises(DivergenceError):
        train_augmented(MlpModel(1, (8, 8), rng=rng), X, 100.0 * y, NoiseSpec.none(1), 1, cfg, rng=rng)


def test_needs_augmentations(line_data, rng):
    X, y, _, _ = line_data
    with pytest.raises(ConfigError):
        train_augmented(MlpModel(1, (4, 4), rng=rng), X, y, NoiseSpec.none(1), 0, SgdConfig(max_iters=1))


def test_select_weight_decay(line_data):
    X, y, X_val, y_val = line_data
    base = SgdConfig(max_iters=100, eval_every=50)
    wd, result = select_weight_decay(1, X, y, NoiseSpec.none(1), 1, base, (X_val, y_val), rng_seed=4,
                                     candidates=(1e-3, 1e-5), hidden=(8, 8))
    assert wd in (1e-3, 1e-5)
    assert result.best_iter == 100
