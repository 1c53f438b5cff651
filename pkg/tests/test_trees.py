import numpy as np
import pytest

from src.errors import DomainError, ShapeError
from src.trees import GradientBoostedTrees


def _step_data(n=400, seed=0):
    rng = np.random.default_rng(seed)
    x = np.column_stack([rng.integers(0, 2, n), rng.random((n, 2))])
    y = np.where(x[:, 0] == 1, 0.8, 0.2) + 0.1 * x[:, 1]
    return x, y


def test_zero_rounds_predict_the_training_mean():
    x, y = _step_data()
    trees = GradientBoostedTrees(n_rounds=0).fit(x, y)
    np.testing.assert_allclose(trees.predict(x), y.mean(), rtol=1e-6)


def test_boosting_fits_a_step_function():
    x, y = _step_data()
    trees = GradientBoostedTrees(n_rounds=60, max_depth=2, shrinkage=0.3, n_bins=16).fit(x, y)
    assert np.mean((trees.predict(x) - y) ** 2) < 1e-3
    held_out, truth = _step_data(seed=1)
    assert np.mean((trees.predict(held_out) - truth) ** 2) < 5e-3


def test_stored_arrays_reproduce_predictions():
    x, y = _step_data()
    trees = GradientBoostedTrees(n_rounds=10, max_depth=3).fit(x, y)
    restored = GradientBoostedTrees(n_rounds=10, max_depth=3)
    restored.load_arrays(trees.to_arrays(), n_inputs=3)
    np.testing.assert_array_equal(restored.predict(x), trees.predict(x))


def test_constant_features_produce_no_splits():
    x = np.ones((50, 2))
    y = np.linspace(0.0, 1.0, 50)
    trees = GradientBoostedTrees(n_rounds=3).fit(x, y)
    assert np.all(trees.features == -1)
    np.testing.assert_allclose(trees.predict(x), y.mean(), rtol=1e-6)


def test_invalid_settings_and_shapes():
    with pytest.raises(DomainError):
        GradientBoostedTrees(max_depth=0)
    with pytest.raises(DomainError):
        GradientBoostedTrees(shrinkage=0.0)
    x, y = _step_data(n=20)
    with pytest.raises(ShapeError):
        GradientBoostedTrees().fit(x, y[:-1])
    trees = GradientBoostedTrees(n_rounds=2).fit(x, y)
    with pytest.raises(ShapeError):
        trees.predict(np.zeros((3, 4)))
