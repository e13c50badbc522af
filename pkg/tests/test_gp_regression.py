import json
import math

import numpy as np
import pytest
from scipy.linalg import LinAlgError

from latgp import gp_regression
from latgp.analytic_model import EVALUATION_HARDWARE, LayerPosition, layer_latency
from latgp.dataset import (
    Dataset,
    DistortionSpec,
    FeatureStats,
    features_to_configs,
    generate_synthetic,
)
from latgp.gp_regression import (
    MODEL_FORMAT,
    MeanFunctionSpec,
    ModelFormatError,
    NumericalFailure,
    fit,
    load_model,
    log_marginal_likelihood,
    loo_residuals,
    predict,
    save_model,
)
from latgp.kernels import KernelKind, KernelSpec, kernel_matrix

HALF_LOG_TWO_PI = 0.5 * math.log(2 * math.pi)


def _layer_features(rng, count: int) -> np.ndarray:
    rows = []
    for _ in range(count):
        rows.append(
            [
                rng.integers(1, 417),
                rng.integers(1, 417),
                rng.integers(1, 417),
                rng.integers(1, 417),
                rng.choice([1, 3, 5, 7]),
                rng.integers(1, 1025),
                rng.integers(1, 1025),
                64,
                64,
                200.0,
                200.0,
                0.7,
                64,
                8,
            ]
        )
    return np.asarray(rows, dtype=float)


def test_single_point_alpha():
    model = fit([[0.0]], [2.0], KernelSpec(), MeanFunctionSpec.zero(), noise=1e-12)

    assert model.alpha[0] == pytest.approx(2.0, rel=1e-9)


def test_analytic_mean_on_exact_targets_leaves_nothing_to_learn():
    dataset = Dataset(generate_synthetic(3, 25, distortion=DistortionSpec.none()))
    X = dataset.design_matrix(with_position=True)

    model = fit(X, dataset.y, KernelSpec(), MeanFunctionSpec.analytic(), noise=1e-2)

    assert np.array_equal(model.residuals, np.zeros(25))
    assert np.array_equal(model.alpha, np.zeros(25))
    assert log_marginal_likelihood(model) == pytest.approx(
        -float(np.sum(np.log(np.diag(model.cholesky_factor)))) - 25 * HALF_LOG_TWO_PI
    )
    np.testing.assert_array_equal(predict(model, X).mean, dataset.y)


def test_two_point_posterior_matches_hand_computation():
    kernel = KernelSpec(KernelKind.MATERN32, signal_variance=1.0, lengthscale=2.0)
    noise = 0.01
    model = fit([[0.0], [1.0]], [1.0, 2.0], kernel, MeanFunctionSpec.zero(), noise)

    # Standardized inputs sit at -1 and +1, so r / lengthscale = 1.
    k = (1 + math.sqrt(3)) * math.exp(-math.sqrt(3))
    a = 1.0 + noise
    det = a * a - k * k
    inverse = np.array([[a, -k], [-k, a]]) / det
    alpha = inverse @ np.array([1.0, 2.0])
    cross = np.array([1.0, k])

    np.testing.assert_allclose(model.alpha, alpha, rtol=1e-9)
    posterior = predict(model, [[0.0]])
    assert posterior.mean[0] == pytest.approx(cross @ alpha, rel=1e-9)
    assert posterior.variance[0] == pytest.approx(1.0 - cross @ inverse @ cross, rel=1e-9)


def test_cholesky_factor_reconstructs_the_noisy_gram_matrix():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 4))
    kernel = KernelSpec(KernelKind.RBF, lengthscale=1.5)
    model = fit(X, rng.standard_normal(30), kernel, MeanFunctionSpec.zero(), noise=1e-3)

    K = kernel_matrix(kernel, model.train_features) + 1e-3 * np.eye(30)
    L = model.cholesky_factor
    assert np.linalg.norm(L @ L.T - K) / np.linalg.norm(K) < 1e-8


def test_log_marginal_likelihood_single_point():
    kernel = KernelSpec(KernelKind.MATERN32, signal_variance=1.0)
    at_zero = fit([[0.0]], [0.0], kernel, MeanFunctionSpec.zero(), noise=1e-12)
    at_one = fit([[0.0]], [1.0], kernel, MeanFunctionSpec.zero(), noise=1e-12)

    assert log_marginal_likelihood(at_zero) == pytest.approx(-0.918939, abs=1e-6)
    assert log_marginal_likelihood(at_one) == pytest.approx(-1.418939, abs=1e-6)


def test_analytic_mean_equals_zero_mean_on_residuals():
    rng = np.random.default_rng(2024)
    mean = MeanFunctionSpec.analytic(position=LayerPosition.MIDDLE)
    for _ in range(100):
        size = int(rng.integers(2, 31))
        X = _layer_features(rng, size)
        X_test = _layer_features(rng, 5)
        y = mean.evaluate(X) * rng.uniform(0.8, 1.5, size) + rng.uniform(0.0, 0.1, size)
        kernel = KernelSpec(
            KernelKind(str(rng.choice([kind.value for kind in KernelKind]))),
            signal_variance=float(rng.uniform(0.1, 2.0)),
            lengthscale=float(rng.uniform(0.5, 3.0)),
        )

        with_mean = predict(fit(X, y, kernel, mean, noise=1e-2), X_test)
        on_residuals = predict(
            fit(X, y - mean.evaluate(X), kernel, MeanFunctionSpec.zero(), noise=1e-2), X_test
        )

        np.testing.assert_allclose(
            with_mean.mean, mean.evaluate(X_test) + on_residuals.mean, rtol=1e-10, atol=1e-12
        )
        np.testing.assert_array_equal(with_mean.variance, on_residuals.variance)


def test_position_column_is_hidden_from_the_kernel():
    dataset = Dataset(generate_synthetic(8, 20))
    X = dataset.design_matrix(with_position=True)
    kernel = KernelSpec(KernelKind.RBF, lengthscale=3.0)

    with_column = fit(X, dataset.y, kernel, MeanFunctionSpec.analytic(), noise=1e-2)
    plain = fit(
        dataset.X,
        dataset.y - MeanFunctionSpec.analytic().evaluate(X),
        kernel,
        MeanFunctionSpec.zero(),
        noise=1e-2,
    )

    assert with_column.train_features.shape[1] == 14
    np.testing.assert_array_equal(with_column.train_features, plain.train_features)
    np.testing.assert_allclose(
        predict(with_column, X).mean - MeanFunctionSpec.analytic().evaluate(X),
        predict(plain, dataset.X).mean,
        rtol=1e-10,
        atol=1e-12,
    )


def test_interpolates_training_targets_with_tiny_noise():
    rng = np.random.default_rng(17)
    for _ in range(20):
        size = int(rng.integers(2, 31))
        X = rng.standard_normal((size, 14))
        y = rng.uniform(1.0, 5.0, size)
        model = fit(X, y, KernelSpec(), MeanFunctionSpec.zero(), noise=1e-10)

        np.testing.assert_allclose(predict(model, X).mean, y, rtol=1e-3)


def test_posterior_variance_does_not_depend_on_targets():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((15, 3))
    X_test = rng.standard_normal((6, 3))
    kernel = KernelSpec(KernelKind.RBF, lengthscale=0.8)

    first = predict(fit(X, rng.standard_normal(15), kernel, noise=1e-2), X_test)
    second = predict(fit(X, 100 * rng.standard_normal(15), kernel, noise=1e-2), X_test)

    assert np.array_equal(first.variance, second.variance)
    assert np.all(first.variance >= 0)


def test_adding_a_training_point_never_increases_variance():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((21, 3))
    y = rng.standard_normal(21)
    X_test = rng.standard_normal((40, 3))
    stats = FeatureStats.fit(X)
    kernel = KernelSpec(KernelKind.MATERN32, lengthscale=1.2)

    fewer = predict(fit(X[:20], y[:20], kernel, noise=1e-2, stats=stats), X_test)
    more = predict(fit(X, y, kernel, noise=1e-2, stats=stats), X_test)

    assert np.all(more.variance <= fewer.variance + 1e-9)


def test_empty_training_set_falls_back_to_prior():
    dataset = Dataset(generate_synthetic(4, 10))
    X = dataset.design_matrix(with_position=True)
    kernel = KernelSpec(signal_variance=0.25)
    model = fit(np.empty((0, 15)), np.empty(0), kernel, MeanFunctionSpec.analytic(), noise=1e-2)

    posterior = predict(model, X)

    expected = [layer_latency(s.layer, s.hw, s.position) for s in dataset]
    np.testing.assert_array_equal(posterior.mean, expected)
    np.testing.assert_array_equal(posterior.variance, np.full(10, 0.25))
    assert loo_residuals(model).shape == (0,)


def test_closed_form_loo_matches_refitting():
    rng = np.random.default_rng(21)
    X = rng.standard_normal((12, 2))
    y = rng.standard_normal(12)
    kernel = KernelSpec(KernelKind.RBF, lengthscale=1.0)
    model = fit(X, y, kernel, noise=0.05)

    for index in range(12):
        keep = np.arange(12) != index
        fold = fit(X[keep], y[keep], kernel, noise=0.05, stats=model.standardization)
        expected = y[index] - predict(fold, X[index : index + 1]).mean[0]
        assert loo_residuals(model)[index] == pytest.approx(expected, rel=1e-8, abs=1e-10)


def test_duplicate_points_trigger_jitter():
    model = fit([[1.0], [1.0]], [1.0, 1.0], KernelSpec(), noise=1e-300)

    assert model.jitter > 0
    assert np.all(np.isfinite(model.alpha))


def test_factorization_failure_raises_numerical_failure(monkeypatch):
    def always_fails(*args, **kwargs):
        raise LinAlgError("not positive definite")

    monkeypatch.setattr(gp_regression, "cholesky", always_fails)

    with pytest.raises(NumericalFailure):
        fit([[0.0], [1.0]], [1.0, 2.0], KernelSpec(), noise=1e-2)


def test_prediction_dimension_mismatch():
    model = fit([[0.0, 1.0], [1.0, 0.0]], [1.0, 2.0])

    with pytest.raises(ValueError, match="dimension"):
        predict(model, [[0.0, 1.0, 2.0]])


@pytest.mark.parametrize(
    "X, y, noise",
    [
        ([[0.0], [1.0]], [1.0], 1e-2),
        ([[0.0], [float("nan")]], [1.0, 2.0], 1e-2),
        ([[0.0], [1.0]], [1.0, 2.0], 0.0),
    ],
)
def test_fit_rejects_invalid_inputs(X, y, noise):
    with pytest.raises(ValueError):
        fit(X, y, noise=noise)


def test_posterior_iterates_as_predictions():
    model = fit([[0.0], [1.0]], [1.0, 2.0])
    posterior = predict(model, [[0.0], [0.5], [1.0]])

    assert len(posterior) == 3
    assert [item.mean for item in posterior] == posterior.mean.tolist()


def test_mean_scale_multiplies_the_analytic_prior():
    dataset = Dataset(generate_synthetic(6, 5))
    X = dataset.design_matrix(with_position=True)

    scaled = MeanFunctionSpec.analytic(scale=1.25).evaluate(X)

    np.testing.assert_allclose(scaled, 1.25 * MeanFunctionSpec.analytic().evaluate(X))


def test_fixed_hardware_overrides_feature_columns():
    rng = np.random.default_rng(1)
    X = _layer_features(rng, 4)
    X[:, 7] = 16
    mean = MeanFunctionSpec.analytic(hardware=EVALUATION_HARDWARE, position=LayerPosition.LAST)

    expected = [
        layer_latency(features_to_configs(row)[0], EVALUATION_HARDWARE, LayerPosition.LAST)
        for row in X
    ]
    np.testing.assert_array_equal(mean.evaluate(X), expected)


def test_saved_model_predicts_identically(tmp_path):
    dataset = Dataset(generate_synthetic(12, 30))
    X = dataset.design_matrix(with_position=True)
    model = fit(
        X,
        dataset.y,
        KernelSpec(KernelKind.RBF, signal_variance=0.5, lengthscale=3.0),
        MeanFunctionSpec.analytic(scale=1.25),
        noise=1e-3,
    )
    path = tmp_path / "model.json"

    save_model(model, path)
    restored = load_model(path)

    assert restored.kernel == model.kernel
    assert restored.mean == model.mean
    np.testing.assert_array_equal(predict(restored, X).mean, predict(model, X).mean)
    np.testing.assert_array_equal(predict(restored, X).variance, predict(model, X).variance)


def test_load_rejects_other_format_versions(tmp_path):
    path = tmp_path / "model.json"
    save_model(fit([[0.0], [1.0]], [1.0, 2.0]), path)
    document = json.loads(path.read_text())
    document["format"] = "latgp-model/0"
    path.write_text(json.dumps(document))

    with pytest.raises(ModelFormatError, match=MODEL_FORMAT):
        load_model(path)
