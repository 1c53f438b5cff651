"""
Small numpy neural engine with hand-derived backward passes.

Sequences are batch-first: (batch, time, features) for dense recurrent layers and
(batch, time, length, channels) for convolutional recurrent layers. Gates are
stacked along the last parameter axis in the order input, forget, cell, output.
"""

import math
from collections import OrderedDict
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import DomainError, ShapeError
from .seeding import derive_seed


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _check_shape(name: str, array: np.ndarray, ndim: int, expected: Dict[int, int]):
    if array.ndim != ndim:
        raise ShapeError(f"{name}: expected a {ndim}-d input, got shape {array.shape}")
    for axis, size in expected.items():
        if array.shape[axis] != size:
            raise ShapeError(f"{name}: axis {axis} has size {array.shape[axis]}, expected {size}")


# --------------------------------------------------------------------------
# Same-padding 1-D convolution along the feature axis
# --------------------------------------------------------------------------


def conv1d(x: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    x: (batch, length, in_channels), w: (kernel, in_channels, out_channels).

    Returns the (batch, length, out_channels) output and the window view the
    weight gradient needs.
    """
    pad = w.shape[0] // 2
    padded = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    windows = sliding_window_view(padded, w.shape[0], axis=1)  # (batch, length, in, kernel)
    return np.tensordot(windows, w, axes=([2, 3], [1, 0])), windows


def conv1d_grad_weights(windows: np.ndarray, dout: np.ndarray) -> np.ndarray:
    return np.tensordot(windows, dout, axes=([0, 1], [0, 1])).transpose(1, 0, 2)


def conv1d_grad_input(dout: np.ndarray, w: np.ndarray) -> np.ndarray:
    kernel, in_channels, _ = w.shape
    pad = kernel // 2
    length = dout.shape[1]
    dpadded = np.zeros((dout.shape[0], length + 2 * pad, in_channels), dtype=dout.dtype)
    for j in range(kernel):
        dpadded[:, j:j + length, :] += dout @ w[j].T
    return dpadded[:, pad:pad + length, :]


# --------------------------------------------------------------------------
# Recurrent cells as functions
# --------------------------------------------------------------------------


def convlstm_forward(params: Dict[str, np.ndarray], x: np.ndarray, h0=None, c0=None):
    """
    ConvLSTM over a sequence.

    i = sigmoid(Conv(Wx_i, X) + Conv(Wh_i, H) + Wci * C_prev + b_i)
    f = sigmoid(Conv(Wx_f, X) + Conv(Wh_f, H) + Wcf * C_prev + b_f)
    C = f * C_prev + i * tanh(Conv(Wx_c, X) + Conv(Wh_c, H) + b_c)
    o = sigmoid(Conv(Wx_o, X) + Conv(Wh_o, H) + Wco * C + b_o)
    H = o * tanh(C)

    Args:
        params: Wx (k, in, 4h), Wh (k, h, 4h), b (4h,), Wci/Wcf/Wco (length, h)
        x: (batch, time, length, in_channels)

    Returns:
        (H sequence, C sequence, cache) with H and C of shape (batch, time, length, h)
    """
    wx, wh, b = params["Wx"], params["Wh"], params["b"]
    length, hidden = params["Wci"].shape
    _check_shape("convlstm input", x, 4, {2: length, 3: wx.shape[1]})
    batch, steps = x.shape[:2]

    zx, x_windows = conv1d(x.reshape(batch * steps, length, -1), wx)
    zx = zx.reshape(batch, steps, length, 4 * hidden)

    h = np.zeros((batch, length, hidden), dtype=wx.dtype) if h0 is None else h0
    c = np.zeros((batch, length, hidden), dtype=wx.dtype) if c0 is None else c0
    hs, cs, gates, h_windows, c_prevs = [], [], [], [], []
    for t in range(steps):
        zh, windows = conv1d(h, wh)
        z = zx[:, t] + zh + b
        i = expit(z[..., :hidden] + params["Wci"] * c)
        f = expit(z[..., hidden:2 * hidden] + params["Wcf"] * c)
        g = np.tanh(z[..., 2 * hidden:3 * hidden])
        c_prevs.append(c)
        c = f * c + i * g
        o = expit(z[..., 3 * hidden:] + params["Wco"] * c)
        h = o * np.tanh(c)
        hs.append(h)
        cs.append(c)
        gates.append((i, f, g, o))
        h_windows.append(windows)

    h_seq = np.stack(hs, axis=1)
    c_seq = np.stack(cs, axis=1)
    cache = (x_windows, h_windows, c_prevs, cs, gates, x.shape)
    return h_seq, c_seq, cache


def convlstm_backward(params: Dict[str, np.ndarray], cache, dh_seq: np.ndarray):
    """Gradients of a convlstm_forward pass; returns (dx, grads)"""
    x_windows, h_windows, c_prevs, cs, gates, x_shape = cache
    wx, wh = params["Wx"], params["Wh"]
    batch, steps, length, in_channels = x_shape
    hidden = params["Wci"].shape[1]

    grads = {name: np.zeros_like(value) for name, value in params.items()}
    dz_all = np.zeros((batch, steps, length, 4 * hidden), dtype=dh_seq.dtype)
    dh_next = np.zeros((batch, length, hidden), dtype=dh_seq.dtype)
    dc_next = np.zeros_like(dh_next)

    for t in reversed(range(steps)):
        i, f, g, o = gates[t]
        c, c_prev = cs[t], c_prevs[t]
        tanh_c = np.tanh(c)
        dh = dh_seq[:, t] + dh_next
        dzo = dh * tanh_c * o * (1.0 - o)
        dc = dc_next + dh * o * (1.0 - tanh_c ** 2) + dzo * params["Wco"]
        dzi = dc * g * i * (1.0 - i)
        dzf = dc * c_prev * f * (1.0 - f)
        dzc = dc * i * (1.0 - g ** 2)

        grads["Wco"] += np.sum(dzo * c, axis=0)
        grads["Wci"] += np.sum(dzi * c_prev, axis=0)
        grads["Wcf"] += np.sum(dzf * c_prev, axis=0)

        dz = np.concatenate([dzi, dzf, dzc, dzo], axis=-1)
        dz_all[:, t] = dz
        grads["Wh"] += conv1d_grad_weights(h_windows[t], dz)
        dh_next = conv1d_grad_input(dz, wh)
        dc_next = dc * f + dzi * params["Wci"] + dzf * params["Wcf"]

    dz_flat = dz_all.reshape(batch * steps, length, 4 * hidden)
    grads["b"] += dz_flat.sum(axis=(0, 1))
    grads["Wx"] += conv1d_grad_weights(x_windows, dz_flat)
    dx = conv1d_grad_input(dz_flat, wx).reshape(batch, steps, length, in_channels)
    return dx, grads


def lstm_forward(params: Dict[str, np.ndarray], x: np.ndarray, h0=None, c0=None):
    """
    Standard LSTM (no peepholes) over a (batch, time, features) sequence.

    Returns (H sequence (batch, time, hidden), cache).
    """
    wx, wh, b = params["Wx"], params["Wh"], params["b"]
    hidden = wh.shape[0]
    _check_shape("lstm input", x, 3, {2: wx.shape[0]})
    batch, steps = x.shape[:2]
    zx = x @ wx

    h = np.zeros((batch, hidden), dtype=wx.dtype) if h0 is None else h0
    c = np.zeros((batch, hidden), dtype=wx.dtype) if c0 is None else c0
    hs, cs, c_prevs, h_prevs, gates = [], [], [], [], []
    for t in range(steps):
        z = zx[:, t] + h @ wh + b
        i = expit(z[:, :hidden])
        f = expit(z[:, hidden:2 * hidden])
        g = np.tanh(z[:, 2 * hidden:3 * hidden])
        o = expit(z[:, 3 * hidden:])
        h_prevs.append(h)
        c_prevs.append(c)
        c = f * c + i * g
        h = o * np.tanh(c)
        hs.append(h)
        cs.append(c)
        gates.append((i, f, g, o))
    return np.stack(hs, axis=1), (x, h_prevs, c_prevs, cs, gates)


def lstm_backward(params: Dict[str, np.ndarray], cache, dh_seq: np.ndarray):
    x, h_prevs, c_prevs, cs, gates = cache
    wx, wh = params["Wx"], params["Wh"]
    batch, steps = x.shape[:2]
    hidden = wh.shape[0]

    grads = {name: np.zeros_like(value) for name, value in params.items()}
    dz_all = np.zeros((batch, steps, 4 * hidden), dtype=dh_seq.dtype)
    dh_next = np.zeros((batch, hidden), dtype=dh_seq.dtype)
    dc_next = np.zeros_like(dh_next)
    for t in reversed(range(steps)):
        i, f, g, o = gates[t]
        tanh_c = np.tanh(cs[t])
        dh = dh_seq[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tanh_c ** 2)
        dz = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prevs[t] * f * (1.0 - f),
                dc * i * (1.0 - g ** 2),
                dh * tanh_c * o * (1.0 - o),
            ],
            axis=1,
        )
        dz_all[:, t] = dz
        grads["Wh"] += h_prevs[t].T @ dz
        dh_next = dz @ wh.T
        dc_next = dc * f

    grads["Wx"] += np.tensordot(x, dz_all, axes=([0, 1], [0, 1]))
    grads["b"] += dz_all.sum(axis=(0, 1))
    return dz_all @ wx.T, grads


def rnn_forward(params: Dict[str, np.ndarray], x: np.ndarray, h0=None):
    """Elman recurrence H = tanh(X Wx + H_prev Wh + b)"""
    wx, wh, b = params["Wx"], params["Wh"], params["b"]
    _check_shape("rnn input", x, 3, {2: wx.shape[0]})
    batch, steps = x.shape[:2]
    zx = x @ wx
    h = np.zeros((batch, wh.shape[0]), dtype=wx.dtype) if h0 is None else h0
    hs, h_prevs = [], []
    for t in range(steps):
        h_prevs.append(h)
        h = np.tanh(zx[:, t] + h @ wh + b)
        hs.append(h)
    h_seq = np.stack(hs, axis=1)
    return h_seq, (x, h_prevs, h_seq)


def rnn_backward(params: Dict[str, np.ndarray], cache, dh_seq: np.ndarray):
    x, h_prevs, h_seq = cache
    wx, wh = params["Wx"], params["Wh"]
    grads = {name: np.zeros_like(value) for name, value in params.items()}
    dz_all = np.zeros_like(h_seq)
    dh_next = np.zeros_like(h_seq[:, 0])
    for t in reversed(range(x.shape[1])):
        dz = (dh_seq[:, t] + dh_next) * (1.0 - h_seq[:, t] ** 2)
        dz_all[:, t] = dz
        grads["Wh"] += h_prevs[t].T @ dz
        dh_next = dz @ wh.T
    grads["Wx"] += np.tensordot(x, dz_all, axes=([0, 1], [0, 1]))
    grads["b"] += dz_all.sum(axis=(0, 1))
    return dz_all @ wx.T, grads


def dropout(x: np.ndarray, rate: float, mode: str = "train", seed: int = 0) -> np.ndarray:
    """Inverted dropout; identity in infer mode"""
    if mode not in ("train", "infer"):
        raise DomainError(f"Dropout mode must be 'train' or 'infer', got {mode!r}")
    if not 0.0 <= rate < 1.0:
        raise DomainError(f"Dropout rate must lie in [0, 1), got {rate}")
    if mode == "infer" or rate == 0.0:
        return x
    keep = np.random.default_rng(seed).random(x.shape) >= rate
    return x * keep.astype(x.dtype) / x.dtype.type(1.0 - rate)


# --------------------------------------------------------------------------
# Layers
# --------------------------------------------------------------------------


class Layer:
    """Base layer: parameters and their gradients in matching dicts"""

    kind = "layer"

    def __init__(self):
        self.params: Dict[str, np.ndarray] = OrderedDict()
        self.grads: Dict[str, np.ndarray] = OrderedDict()
        self._cache = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grad(self):
        for name, value in self.params.items():
            self.grads[name] = np.zeros_like(value)

    def _accumulate(self, grads: Dict[str, np.ndarray]):
        for name, value in grads.items():
            self.grads[name] += value


class ConvLSTM(Layer):
    kind = "convlstm"

    def __init__(self, length: int, in_channels: int, hidden_channels: int, kernel_size: int = 3,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        super().__init__()
        if kernel_size % 2 == 0:
            raise DomainError(f"Same padding needs an odd kernel size, got {kernel_size}")
        rng = rng or np.random.default_rng(0)
        gates = 4 * hidden_channels
        self.params["Wx"] = glorot_uniform(rng, (kernel_size, in_channels, gates),
                                           kernel_size * in_channels, kernel_size * hidden_channels, dtype)
        self.params["Wh"] = glorot_uniform(rng, (kernel_size, hidden_channels, gates),
                                           kernel_size * hidden_channels, kernel_size * hidden_channels, dtype)
        b = np.zeros(gates, dtype=dtype)
        b[hidden_channels:2 * hidden_channels] = 1.0
        self.params["b"] = b
        for name in ("Wci", "Wcf", "Wco"):
            self.params[name] = np.zeros((length, hidden_channels), dtype=dtype)
        self.zero_grad()

    def forward(self, x, training=False):
        h_seq, _, self._cache = convlstm_forward(self.params, x)
        return h_seq

    def backward(self, dy):
        dx, grads = convlstm_backward(self.params, self._cache, dy)
        self._accumulate(grads)
        return dx


class LSTM(Layer):
    kind = "lstm"

    def __init__(self, n_inputs: int, n_hidden: int, rng: Optional[np.random.Generator] = None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.params["Wx"] = glorot_uniform(rng, (n_inputs, 4 * n_hidden), n_inputs, n_hidden, dtype)
        self.params["Wh"] = glorot_uniform(rng, (n_hidden, 4 * n_hidden), n_hidden, n_hidden, dtype)
        b = np.zeros(4 * n_hidden, dtype=dtype)
        b[n_hidden:2 * n_hidden] = 1.0
        self.params["b"] = b
        self.zero_grad()

    def forward(self, x, training=False):
        h_seq, self._cache = lstm_forward(self.params, x)
        return h_seq

    def backward(self, dy):
        dx, grads = lstm_backward(self.params, self._cache, dy)
        self._accumulate(grads)
        return dx


class SimpleRNN(Layer):
    kind = "rnn"

    def __init__(self, n_inputs: int, n_hidden: int, rng: Optional[np.random.Generator] = None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.params["Wx"] = glorot_uniform(rng, (n_inputs, n_hidden), n_inputs, n_hidden, dtype)
        self.params["Wh"] = glorot_uniform(rng, (n_hidden, n_hidden), n_hidden, n_hidden, dtype)
        self.params["b"] = np.zeros(n_hidden, dtype=dtype)
        self.zero_grad()

    def forward(self, x, training=False):
        h_seq, self._cache = rnn_forward(self.params, x)
        return h_seq

    def backward(self, dy):
        dx, grads = rnn_backward(self.params, self._cache, dy)
        self._accumulate(grads)
        return dx


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate: float, seed: int = 0):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise DomainError(f"Dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.reseed(seed)

    def reseed(self, seed: int):
        self._rng = np.random.default_rng(seed)

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._cache = None
            return x
        mask = (self._rng.random(x.shape) >= self.rate).astype(x.dtype) / x.dtype.type(1.0 - self.rate)
        self._cache = mask
        return x * mask

    def backward(self, dy):
        return dy if self._cache is None else dy * self._cache


class AddChannel(Layer):
    """(batch, time, features) -> (batch, time, features, 1)"""

    kind = "add_channel"

    def forward(self, x, training=False):
        return x[..., None]

    def backward(self, dy):
        return dy[..., 0]


class TimeFlatten(Layer):
    """(batch, time, length, channels) -> (batch, time, length * channels)"""

    kind = "time_flatten"

    def forward(self, x, training=False):
        self._cache = x.shape
        return x.reshape(x.shape[0], x.shape[1], -1)

    def backward(self, dy):
        return dy.reshape(self._cache)


class LastStep(Layer):
    """Keep the final time step of a sequence"""

    kind = "last_step"

    def forward(self, x, training=False):
        self._cache = x.shape
        return x[:, -1]

    def backward(self, dy):
        dx = np.zeros(self._cache, dtype=dy.dtype)
        dx[:, -1] = dy
        return dx


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_inputs: int, n_outputs: int, rng: Optional[np.random.Generator] = None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.params["W"] = glorot_uniform(rng, (n_inputs, n_outputs), n_inputs, n_outputs, dtype)
        self.params["b"] = np.zeros(n_outputs, dtype=dtype)
        self.zero_grad()

    def forward(self, x, training=False):
        _check_shape("dense input", x, 2, {1: self.params["W"].shape[0]})
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy):
        self.grads["W"] += self._cache.T @ dy
        self.grads["b"] += dy.sum(axis=0)
        return dy @ self.params["W"].T


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, training=False):
        y = expit(x)
        self._cache = y
        return y

    def backward(self, dy):
        y = self._cache
        return dy * y * (1.0 - y)


class Sequential:
    """Layers applied in order; parameter names are '<layer index>.<param>'"""

    def __init__(self, layers: Sequence[Layer], dtype=np.float32):
        self.layers: List[Layer] = list(layers)
        self.dtype = np.dtype(dtype)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        out = np.asarray(x, dtype=self.dtype)
        for layer in self.layers:
            out = layer.forward(out, training)
        return out

    def backward(self, dy: np.ndarray) -> np.ndarray:
        grad = np.asarray(dy, dtype=self.dtype)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def predict(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """Inference-mode outputs, flattened to one value per sample"""
        outputs = [
            self.forward(x[start:start + batch_size], training=False).reshape(-1)
            for start in range(0, len(x), batch_size)
        ]
        return np.concatenate(outputs) if outputs else np.zeros(0, dtype=self.dtype)

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def reseed(self, seed: int):
        """Re-seed every dropout layer from one training seed"""
        for index, layer in enumerate(self.layers):
            if isinstance(layer, Dropout):
                layer.reseed(derive_seed(seed, "dropout", index))

    def parameters(self) -> Dict[str, np.ndarray]:
        return OrderedDict(
            (f"{index}.{name}", value)
            for index, layer in enumerate(self.layers)
            for name, value in layer.params.items()
        )

    def gradients(self) -> Dict[str, np.ndarray]:
        return OrderedDict(
            (f"{index}.{name}", value)
            for index, layer in enumerate(self.layers)
            for name, value in layer.grads.items()
        )

    @property
    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.parameters().values()))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, value.copy()) for name, value in self.parameters().items())

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise ShapeError(f"State mismatch: missing {missing[:3]}, unexpected {unexpected[:3]}")
        for name, value in params.items():
            if value.shape != state[name].shape:
                raise ShapeError(f"Parameter {name}: shape {state[name].shape}, expected {value.shape}")
            value[...] = state[name]


# --------------------------------------------------------------------------
# Loss, optimizer, gradient checking
# --------------------------------------------------------------------------


def grouped_mse(pred: np.ndarray, target: np.ndarray, groups: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
    """
    Mean over groups of the per-group mean squared error.

    Each group is one bond: L = (1/N) sum_i (1/T_i) sum_t (pred - target)^2.
    Without groups every sample is its own group.

    Returns:
        (loss, dL/dpred with the shape of pred)
    """
    shape = np.shape(pred)
    pred = np.asarray(pred).reshape(-1)
    target = np.asarray(target, dtype=pred.dtype).reshape(-1)
    if pred.shape != target.shape:
        raise ShapeError(f"Predictions {pred.shape} and targets {target.shape} differ")
    if pred.size == 0:
        raise DomainError("Loss of an empty batch")
    if groups is None:
        weights = np.full(pred.shape, 1.0 / pred.size)
    else:
        _, inverse, counts = np.unique(np.asarray(groups).reshape(-1), return_inverse=True, return_counts=True)
        weights = 1.0 / (len(counts) * counts[inverse.reshape(-1)])
    diff = pred.astype(np.float64) - target.astype(np.float64)
    loss = float(np.sum(weights * diff ** 2))
    grad = (2.0 * weights * diff).astype(pred.dtype).reshape(shape)
    return loss, grad


def mse_loss(preds: Sequence[np.ndarray], labels: Sequence[np.ndarray]) -> float:
    """Grouped MSE over per-bond prediction and label series"""
    if len(preds) != len(labels):
        raise ShapeError(f"{len(preds)} prediction series for {len(labels)} label series")
    groups = np.concatenate([np.full(len(p), i) for i, p in enumerate(preds)])
    loss, _ = grouped_mse(
        np.concatenate([np.asarray(p, dtype=np.float64) for p in preds]),
        np.concatenate([np.asarray(t, dtype=np.float64) for t in labels]),
        groups,
    )
    return loss


class RMSProp:
    """avg <- rho * avg + (1 - rho) * g^2; theta <- theta - lr * g / (sqrt(avg) + eps)"""

    def __init__(self, learning_rate: float = 0.001, rho: float = 0.9, epsilon: float = 1e-7):
        self.learning_rate = learning_rate
        self.rho = rho
        self.epsilon = epsilon
        self.avg: Dict[str, np.ndarray] = OrderedDict()

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        """Update params in place"""
        for name, value in params.items():
            grad = grads[name]
            avg = self.avg.get(name)
            if avg is None:
                avg = self.avg[name] = np.zeros_like(value)
            avg *= self.rho
            avg += (1.0 - self.rho) * grad * grad
            value -= self.learning_rate * grad / (np.sqrt(avg) + self.epsilon)

    def hyperparameters(self) -> Dict[str, float]:
        return {"learning_rate": self.learning_rate, "rho": self.rho, "epsilon": self.epsilon}

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, value.copy()) for name, value in self.avg.items())

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        self.avg = OrderedDict((name, np.array(value)) for name, value in state.items())


def rmsprop_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: RMSProp) -> Dict[str, np.ndarray]:
    state.step(params, grads)
    return params


def numerical_gradient(f: Callable[[], float], x: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Central differences of f() with respect to every entry of x (perturbed in place)"""
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    for index in range(flat.size):
        original = flat[index]
        flat[index] = original + eps
        plus = f()
        flat[index] = original - eps
        minus = f()
        flat[index] = original
        grad.reshape(-1)[index] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / (||a|| + ||n||); 0 when both vanish"""
    denominator = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if denominator == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denominator)


def check_gradients(
    model: Sequential,
    x: np.ndarray,
    target: np.ndarray,
    groups: Optional[np.ndarray] = None,
    eps: float = 1e-3,
) -> Dict[str, float]:
    """
    Relative error between backprop and central differences for every parameter
    and for the input, on the grouped MSE of an inference-mode forward pass.
    """
    x = np.array(x, dtype=model.dtype)

    def loss() -> float:
        return grouped_mse(model.forward(x, training=False), target, groups)[0]

    model.zero_grad()
    _, dpred = grouped_mse(model.forward(x, training=False), target, groups)
    dx = model.backward(dpred)

    errors = {name: relative_error(model.gradients()[name], numerical_gradient(loss, value, eps))
              for name, value in model.parameters().items()}
    errors["input"] = relative_error(dx, numerical_gradient(loss, x, eps))
    return errors
