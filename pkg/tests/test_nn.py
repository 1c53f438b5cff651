import numpy as np
import pytest
from scipy.special import expit

from src.errors import DomainError, ShapeError
from src.models import ArchitectureConfig, build_model
from src.nn import (
    LSTM,
    RMSProp,
    AddChannel,
    ConvLSTM,
    Dense,
    Dropout,
    LastStep,
    Sequential,
    Sigmoid,
    SimpleRNN,
    TimeFlatten,
    check_gradients,
    convlstm_forward,
    dropout,
    grouped_mse,
    lstm_forward,
    mse_loss,
    numerical_gradient,
    rmsprop_step,
)

GRADIENT_TOLERANCE = 1e-4


def _zero_convlstm_params(length=5, in_channels=1, hidden=2, kernel=3):
    return {
        "Wx": np.zeros((kernel, in_channels, 4 * hidden)),
        "Wh": np.zeros((kernel, hidden, 4 * hidden)),
        "b": np.zeros(4 * hidden),
        "Wci": np.zeros((length, hidden)),
        "Wcf": np.zeros((length, hidden)),
        "Wco": np.zeros((length, hidden)),
    }


def test_zero_convlstm_stays_at_rest():
    x = np.random.default_rng(0).normal(size=(1, 3, 5, 1))
    h_seq, c_seq, _ = convlstm_forward(_zero_convlstm_params(), x)
    np.testing.assert_array_equal(h_seq, 0.0)
    np.testing.assert_array_equal(c_seq, 0.0)


def test_zero_convlstm_halves_the_cell_state():
    c0 = np.full((1, 5, 2), 0.8)
    x = np.zeros((1, 1, 5, 1))
    h_seq, c_seq, _ = convlstm_forward(_zero_convlstm_params(), x, c0=c0)
    np.testing.assert_allclose(c_seq[:, 0], 0.4)
    np.testing.assert_allclose(h_seq[:, 0], 0.5 * np.tanh(0.4))


def test_convlstm_rejects_wrong_feature_length():
    with pytest.raises(ShapeError):
        convlstm_forward(_zero_convlstm_params(length=5), np.zeros((1, 2, 4, 1)))


def test_single_lstm_step_by_hand():
    wx = np.array([[0.5, -0.3, 0.8, 0.2]])
    wh = np.array([[0.1, 0.2, -0.4, 0.3]])
    b = np.array([0.05, 1.0, -0.1, 0.0])
    x = np.array([[[0.7]]])
    h_seq, _ = lstm_forward({"Wx": wx, "Wh": wh, "b": b}, x)
    z = 0.7 * wx[0] + b
    i, f, g, o = expit(z[0]), expit(z[1]), np.tanh(z[2]), expit(z[3])
    c = i * g
    assert h_seq[0, 0, 0] == pytest.approx(o * np.tanh(c), abs=1e-12)
    assert f > 0.5


def test_zero_lstm_outputs_zero():
    params = {"Wx": np.zeros((3, 8)), "Wh": np.zeros((2, 8)), "b": np.zeros(8)}
    h_seq, _ = lstm_forward(params, np.random.default_rng(1).normal(size=(2, 4, 3)))
    np.testing.assert_array_equal(h_seq, 0.0)


def _loss_check(model, x, seed=0):
    target = np.random.default_rng(seed).random(len(x))
    groups = np.array(["a", "a", "b"][: len(x)])
    return check_gradients(model, x, target, groups)


def test_dense_gradients():
    rng = np.random.default_rng(0)
    model = Sequential([Dense(4, 1, rng=rng, dtype=np.float64), Sigmoid()], dtype=np.float64)
    errors = _loss_check(model, rng.normal(size=(3, 4)))
    assert max(errors.values()) < GRADIENT_TOLERANCE


@pytest.mark.parametrize("cell", [LSTM, SimpleRNN])
def test_recurrent_layer_gradients(cell):
    rng = np.random.default_rng(1)
    model = Sequential(
        [cell(3, 4, rng=rng, dtype=np.float64), LastStep(), Dense(4, 1, rng=rng, dtype=np.float64), Sigmoid()],
        dtype=np.float64,
    )
    errors = _loss_check(model, rng.normal(size=(3, 4, 3)))
    assert max(errors.values()) < GRADIENT_TOLERANCE


def test_convlstm_layer_gradients_with_peepholes():
    rng = np.random.default_rng(2)
    conv = ConvLSTM(6, 1, 3, 3, rng=rng, dtype=np.float64)
    for name in ("Wci", "Wcf", "Wco"):
        conv.params[name][...] = rng.normal(0.0, 0.3, size=conv.params[name].shape)
    model = Sequential(
        [AddChannel(), conv, TimeFlatten(), LastStep(), Dense(18, 1, rng=rng, dtype=np.float64), Sigmoid()],
        dtype=np.float64,
    )
    errors = _loss_check(model, rng.normal(size=(2, 3, 6)))
    assert max(errors.values()) < GRADIENT_TOLERANCE


@pytest.mark.parametrize("seed", range(20))
def test_full_architecture_gradients(seed):
    config = ArchitectureConfig(
        variant="ours", window=3, n_features=8, hidden_size=4, conv_channels=2,
        n_recurrent_layers=2, dropout_schedule=(0.5, 0.25), seed=seed,
    )
    network = build_model(config, dtype=np.float64).network
    x = np.random.default_rng(seed).normal(size=(2, 3, 8))
    errors = _loss_check(network, x, seed)
    assert max(errors.values()) < GRADIENT_TOLERANCE


def test_pconvlstm_gradients():
    config = ArchitectureConfig(
        variant="pconvlstm", window=2, n_features=5, conv_channels=2,
        n_recurrent_layers=2, dropout_schedule=(0.0, 0.0),
    )
    network = build_model(config, dtype=np.float64).network
    errors = _loss_check(network, np.random.default_rng(3).normal(size=(2, 2, 5)))
    assert max(errors.values()) < GRADIENT_TOLERANCE


def test_dropout_function():
    x = np.ones(1_000_000, dtype=np.float64)
    np.testing.assert_array_equal(dropout(x, 0.0), x)
    np.testing.assert_array_equal(dropout(x, 0.5, mode="infer"), x)
    dropped = dropout(x, 0.5, seed=3)
    assert np.mean(dropped > 0) == pytest.approx(0.5, abs=0.002)
    assert dropped.mean() == pytest.approx(1.0, rel=0.01)
    with pytest.raises(DomainError):
        dropout(x, 1.0)
    with pytest.raises(DomainError):
        dropout(x, 0.5, mode="eval")


def test_dropout_layer_is_inactive_at_inference():
    layer = Dropout(0.5, seed=0)
    x = np.ones((40, 10), dtype=np.float32)
    np.testing.assert_array_equal(layer.forward(x, training=False), x)
    assert (layer.forward(x, training=True) == 0).any()


def test_grouped_mse_averages_per_bond():
    assert mse_loss([np.array([0.3, 0.4])], [np.array([0.3, 0.4])]) == 0.0
    assert mse_loss([np.array([1.0]), np.array([0.0, 0.0])], [np.array([0.0]), np.array([0.0, 0.0])]) == 0.5


def test_grouped_mse_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    pred, target = rng.random(6), rng.random(6)
    groups = np.array(["a", "a", "a", "b", "c", "c"])
    _, grad = grouped_mse(pred, target, groups)
    numeric = numerical_gradient(lambda: grouped_mse(pred, target, groups)[0], pred, eps=1e-6)
    np.testing.assert_allclose(grad, numeric, atol=1e-8)


def test_grouped_mse_rejects_mismatched_shapes():
    with pytest.raises(ShapeError):
        grouped_mse(np.zeros(3), np.zeros(2))
    with pytest.raises(DomainError):
        grouped_mse(np.zeros(0), np.zeros(0))


def test_rmsprop_first_step():
    params = {"w": np.array([1.0])}
    rmsprop_step(params, {"w": np.array([1.0])}, RMSProp())
    assert params["w"][0] - 1.0 == pytest.approx(-0.001 / (np.sqrt(0.1) + 1e-7), abs=1e-12)
    assert params["w"][0] - 1.0 == pytest.approx(-0.0031623, abs=1e-7)


def test_rmsprop_zero_gradient_leaves_parameters():
    params = {"w": np.array([0.25, -0.5])}
    RMSProp().step(params, {"w": np.zeros(2)})
    np.testing.assert_array_equal(params["w"], [0.25, -0.5])


def test_rmsprop_steps_approach_the_learning_rate():
    params = {"w": np.array([0.0])}
    optimizer = RMSProp()
    for _ in range(300):
        before = params["w"][0]
        optimizer.step(params, {"w": np.array([2.0])})
    assert before - params["w"][0] == pytest.approx(0.001, rel=1e-6)


def test_state_dict_round_trip_and_mismatch():
    rng = np.random.default_rng(5)
    model = Sequential([LSTM(3, 2, rng=rng), LastStep(), Dense(2, 1, rng=rng), Sigmoid()])
    x = rng.normal(size=(4, 2, 3)).astype(np.float32)
    before = model.predict(x)
    state = model.state_dict()
    for value in model.parameters().values():
        value[...] = 0.0
    model.load_state_dict(state)
    np.testing.assert_array_equal(model.predict(x), before)
    np.testing.assert_array_equal(model.predict(x), model.predict(x))

    broken = dict(state)
    broken["0.Wx"] = np.zeros((5, 8), dtype=np.float32)
    with pytest.raises(ShapeError):
        model.load_state_dict(broken)
    with pytest.raises(ShapeError):
        model.load_state_dict({})


def test_parameter_names_carry_layer_index():
    model = Sequential([Dense(2, 3), Sigmoid(), Dense(3, 1)])
    assert list(model.parameters()) == ["0.W", "0.b", "2.W", "2.b"]
    assert model.n_parameters == 2 * 3 + 3 + 3 + 1
