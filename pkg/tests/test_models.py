import numpy as np
import pytest

from src.errors import ConfigError, NumericalError, ShapeError
from src.models import (
    VARIANTS,
    ArchitectureConfig,
    Checkpoint,
    PersistenceForecaster,
    build_model,
    predict,
    train,
)


def test_architecture_forward_gives_a_probability():
    model = build_model(ArchitectureConfig(variant="ours", window=2))
    x = np.random.default_rng(0).normal(size=(1, 2, 53)).astype(np.float32)
    out = model.predict_inputs(x)
    assert out.shape == (1,)
    assert 0.0 < out[0] < 1.0


@pytest.mark.parametrize("variant", ["rnn", "lstm", "pconvlstm"])
def test_neural_baselines_build_and_predict(variant, tiny_architecture):
    model = build_model(tiny_architecture(variant, window=3))
    out = model.predict_inputs(np.zeros((4, 3, 53), dtype=np.float32))
    assert out.shape == (4,)
    assert np.all((out > 0) & (out < 1))


def test_initialization_depends_only_on_the_seed(tiny_architecture):
    first = build_model(tiny_architecture("ours", seed=3))
    second = build_model(tiny_architecture("ours", seed=3))
    other = build_model(tiny_architecture("ours", seed=4))
    assert first.n_parameters == other.n_parameters
    for name, value in first.state().items():
        np.testing.assert_array_equal(value, second.state()[name])
    assert any(not np.array_equal(v, other.state()[k]) for k, v in first.state().items())


def test_architecture_validation_lists_every_problem():
    with pytest.raises(ConfigError) as excinfo:
        ArchitectureConfig(variant="transformer", n_recurrent_layers=3, conv_kernel=4)
    assert len(excinfo.value.violations) == 3


def test_variant_names_are_case_insensitive():
    assert ArchitectureConfig(variant="LSTM").variant == "lstm"
    assert ArchitectureConfig(variant="Ours").display_name == "Ours"
    assert set(VARIANTS) == {"ours", "rnn", "lstm", "pconvlstm", "boosting", "persistence"}


def test_boosting_without_rounds_predicts_the_label_mean(toy_dataset, tiny_architecture):
    dataset = toy_dataset(splits=("train", "train"), n_features=53)
    config = tiny_architecture("boosting", boosting_rounds=0, max_samples_per_epoch=None)
    result = train(build_model(config), dataset, config)
    mean = dataset.labels.astype(np.float64).mean()
    np.testing.assert_allclose(predict(result.model, dataset), mean, rtol=1e-6)


def test_training_reduces_the_loss(toy_dataset, tiny_architecture):
    dataset = toy_dataset(splits=("train",) * 5 + ("val",), n_features=6)
    config = tiny_architecture(
        "lstm", n_features=6, n_recurrent_layers=1, dropout_schedule=(0.0,), hidden_size=8,
        epochs=15, patience=15, learning_rate=0.01, max_samples_per_epoch=None,
    )
    result = train(build_model(config), dataset, config)
    losses = [epoch["train_loss"] for epoch in result.trace]
    assert min(losses[1:]) < losses[0]
    assert result.checkpoint.best_val_loss == min(epoch["val_loss"] for epoch in result.trace)
    assert result.checkpoint.trace[result.checkpoint.best_epoch - 1]["val_loss"] == result.checkpoint.best_val_loss


def test_small_training_set_can_be_memorized(toy_dataset, tiny_architecture):
    dataset = toy_dataset(splits=("train",), per_bond=8, n_features=4, seed=2)
    config = tiny_architecture(
        "lstm", n_features=4, n_recurrent_layers=1, dropout_schedule=(0.0,), hidden_size=16,
        epochs=400, patience=400, learning_rate=0.005, max_samples_per_epoch=None,
    )
    result = train(build_model(config), dataset, config)
    pred = predict(result.model, dataset)
    assert np.mean((pred - dataset.labels) ** 2) < 2e-3


def test_training_is_reproducible(toy_dataset, tiny_architecture):
    dataset = toy_dataset(n_features=53)
    runs = []
    for _ in range(2):
        config = tiny_architecture("ours", seed=5)
        runs.append(train(build_model(config), dataset, config))
    assert runs[0].trace == runs[1].trace
    for name, value in runs[0].checkpoint.parameters.items():
        np.testing.assert_array_equal(value, runs[1].checkpoint.parameters[name])


def test_non_finite_loss_is_reported(toy_dataset, tiny_architecture):
    dataset = toy_dataset(n_features=53)
    dataset.inputs[0, 0, 0] = np.nan
    config = tiny_architecture("lstm", max_samples_per_epoch=None, batch_size=len(dataset))
    with pytest.raises(NumericalError, match="epoch 1"):
        train(build_model(config), dataset, config)


def test_window_mismatch_is_rejected(toy_dataset, tiny_architecture):
    dataset = toy_dataset(window=3, n_features=53)
    config = tiny_architecture("lstm", window=2)
    with pytest.raises(ShapeError):
        train(build_model(config), dataset, config)
    with pytest.raises(ShapeError):
        predict(build_model(config), dataset)


def test_persistence_repeats_todays_label(toy_dataset):
    dataset = toy_dataset(n_features=53)
    model = build_model(ArchitectureConfig(variant="persistence"))
    assert isinstance(model, PersistenceForecaster)
    np.testing.assert_array_equal(predict(model, dataset), dataset.last_labels.astype(np.float64))
    result = train(model, dataset)
    assert result.checkpoint.best_epoch == 1


def test_checkpoint_restores_identical_predictions(small_dataset, tiny_architecture):
    config = tiny_architecture("ours", epochs=1)
    result = train(build_model(config), small_dataset, config)
    test = small_dataset.subset("test")
    expected = predict(result.model, test)
    np.testing.assert_array_equal(predict(result.checkpoint, test), expected)

    header, arrays = result.checkpoint.to_container()
    restored = Checkpoint.from_container(header, arrays)
    np.testing.assert_array_equal(predict(restored, test), expected)
    assert restored.registry_hash == small_dataset.registry_hash


def test_identical_windows_give_identical_outputs(small_dataset, tiny_architecture):
    model = build_model(tiny_architecture("ours"))
    window = small_dataset.inputs[:1]
    outputs = model.predict_inputs(np.repeat(window, 3, axis=0))
    np.testing.assert_allclose(outputs, outputs[0], rtol=1e-6)


def test_rolling_prediction_chains_the_prior_column(small_dataset, tiny_architecture):
    model = build_model(tiny_architecture("ours"))
    test = small_dataset.subset("test")
    direct = predict(model, test)
    rolling = predict(model, test, rolling=True)
    assert np.all((rolling > 0) & (rolling < 1))
    np.testing.assert_array_equal(predict(model, test, rolling=True), rolling)
    for bond_id in np.unique(test.bond_ids):
        rows = np.flatnonzero(test.bond_ids == bond_id)
        rows = rows[np.argsort(test.end_days[rows])]
        # the first two windows have no earlier prediction to substitute
        np.testing.assert_allclose(rolling[rows[:2]], direct[rows[:2]], rtol=1e-5)
    assert np.any(rolling != direct)


def test_empty_dataset_predicts_nothing(small_dataset, tiny_architecture):
    model = build_model(tiny_architecture("lstm"))
    empty = small_dataset.select(np.zeros(len(small_dataset), dtype=bool))
    assert predict(model, empty).shape == (0,)
