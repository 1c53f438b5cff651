"""
Forecasting models: the ConvLSTM architecture, its baselines, training and prediction
"""

from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError
from .logger import get_logger
from .nn import (
    AddChannel,
    ConvLSTM,
    Dense,
    Dropout,
    LastStep,
    LSTM,
    RMSProp,
    Sequential,
    Sigmoid,
    SimpleRNN,
    TimeFlatten,
    grouped_mse,
)
from .pipeline import WindowedDataset
from .schema import N_FEATURES, PRIOR_PD_ID, column
from .seeding import derive_seed, make_rng
from .trees import GradientBoostedTrees

logger = get_logger("models")

NEURAL_VARIANTS = ("ours", "rnn", "lstm", "pconvlstm")
VARIANTS = NEURAL_VARIANTS + ("boosting", "persistence")
DISPLAY_NAMES = {
    "ours": "Ours",
    "rnn": "RNN",
    "lstm": "LSTM",
    "pconvlstm": "PConvLSTM",
    "boosting": "Boosting",
    "persistence": "Persistence",
}
DEFAULT_DROPOUT_SCHEDULE = (0.5, 0.5, 0.5, 0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.125)


@dataclass(frozen=True)
class ArchitectureConfig:
    variant: str = "ours"
    window: int = 2
    n_features: int = N_FEATURES
    hidden_size: int = 32
    conv_kernel: int = 3
    conv_channels: int = 8
    n_recurrent_layers: int = 10
    dropout_schedule: Tuple[float, ...] = DEFAULT_DROPOUT_SCHEDULE
    epochs: int = 50
    batch_size: int = 2
    patience: int = 10
    learning_rate: float = 0.001
    rho: float = 0.9
    epsilon: float = 1e-7
    # Per-epoch sample draw (and boosting row cap); None uses every training sample
    max_samples_per_epoch: Optional[int] = 2000
    seed: int = 0
    boosting_rounds: int = 200
    tree_depth: int = 3
    shrinkage: float = 0.1
    n_bins: int = 64

    def __post_init__(self):
        object.__setattr__(self, "variant", str(self.variant).lower())
        object.__setattr__(self, "dropout_schedule", tuple(float(r) for r in self.dropout_schedule))
        problems = self.violations()
        if problems:
            raise ConfigError(problems)

    def violations(self) -> List[str]:
        problems = []
        if self.variant not in VARIANTS:
            problems.append(f"Unknown model variant '{self.variant}' (expected one of {', '.join(VARIANTS)})")
        if self.window < 1:
            problems.append(f"models.window must be >= 1 (got {self.window})")
        for name in ("n_features", "hidden_size", "conv_channels", "n_recurrent_layers", "epochs", "batch_size", "tree_depth", "n_bins"):
            if getattr(self, name) < 1:
                problems.append(f"models.{name} must be >= 1 (got {getattr(self, name)})")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            problems.append(f"models.conv_kernel must be a positive odd number (got {self.conv_kernel})")
        if len(self.dropout_schedule) != self.n_recurrent_layers:
            problems.append(
                f"models.dropout_schedule needs {self.n_recurrent_layers} rates (got {len(self.dropout_schedule)})"
            )
        if any(not 0.0 <= r < 1.0 for r in self.dropout_schedule):
            problems.append("models.dropout_schedule rates must lie in [0, 1)")
        if self.patience < 0 or self.boosting_rounds < 0:
            problems.append("models.patience and models.boosting_rounds must be >= 0")
        if self.learning_rate <= 0 or self.epsilon <= 0 or not 0.0 < self.rho < 1.0:
            problems.append("models.learning_rate and models.epsilon must be > 0 and models.rho in (0, 1)")
        if self.max_samples_per_epoch is not None and self.max_samples_per_epoch < 1:
            problems.append("models.max_samples_per_epoch must be >= 1")
        return problems

    @property
    def display_name(self) -> str:
        return DISPLAY_NAMES[self.variant]

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["dropout_schedule"] = list(self.dropout_schedule)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ArchitectureConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


# --------------------------------------------------------------------------
# Models
# --------------------------------------------------------------------------


class NeuralForecaster:
    """A Sequential network ending in a sigmoid unit"""

    def __init__(self, config: ArchitectureConfig, network: Sequential):
        self.config = config
        self.network = network

    def predict_inputs(self, inputs: np.ndarray) -> np.ndarray:
        return self.network.predict(inputs).astype(np.float64)

    def state(self) -> Dict[str, np.ndarray]:
        return self.network.state_dict()

    def load_state(self, arrays: Dict[str, np.ndarray]):
        self.network.load_state_dict(arrays)

    @property
    def n_parameters(self) -> int:
        return self.network.n_parameters


class BoostingForecaster:
    def __init__(self, config: ArchitectureConfig):
        self.config = config
        self.trees = GradientBoostedTrees(config.boosting_rounds, config.tree_depth, config.shrinkage, config.n_bins)

    def predict_inputs(self, inputs: np.ndarray) -> np.ndarray:
        return np.clip(self.trees.predict(inputs.reshape(len(inputs), -1)), 0.0, 1.0)

    def state(self) -> Dict[str, np.ndarray]:
        return self.trees.to_arrays()

    def load_state(self, arrays: Dict[str, np.ndarray]):
        self.trees.load_arrays(arrays, self.config.window * self.config.n_features)

    @property
    def n_parameters(self) -> int:
        return int(self.trees.values.size)


class PersistenceForecaster:
    """Tomorrow's probability equals today's label"""

    def __init__(self, config: ArchitectureConfig):
        self.config = config

    def state(self) -> Dict[str, np.ndarray]:
        return {}

    def load_state(self, arrays: Dict[str, np.ndarray]):
        pass

    n_parameters = 0


def _recurrent_stack(config: ArchitectureConfig, n_inputs: int, cell, rng, dtype) -> List:
    layers = []
    for index, rate in enumerate(config.dropout_schedule):
        layers.append(cell(n_inputs if index == 0 else config.hidden_size, config.hidden_size, rng=rng, dtype=dtype))
        layers.append(Dropout(rate))
    return layers


def build_model(config: ArchitectureConfig, dtype=np.float32):
    """
    Assemble a model for ``config.variant``.

    ours:        ConvLSTM over the feature axis -> per-step flatten -> stacked LSTM -> dense -> sigmoid
    lstm / rnn:  stacked LSTM / tanh RNN with the same dropout schedule -> dense -> sigmoid
    pconvlstm:   every recurrent layer a ConvLSTM -> flatten -> dense -> sigmoid
    boosting:    gradient-boosted trees on flattened windows
    persistence: previous-day label
    """
    if config.variant not in VARIANTS:
        raise ConfigError(f"Unknown model variant '{config.variant}'")
    if config.variant == "boosting":
        return BoostingForecaster(config)
    if config.variant == "persistence":
        return PersistenceForecaster(config)

    rng = make_rng(config.seed, "init", config.variant)
    n_features = config.n_features
    if config.variant == "ours":
        layers = [
            AddChannel(),
            ConvLSTM(n_features, 1, config.conv_channels, config.conv_kernel, rng=rng, dtype=dtype),
            TimeFlatten(),
        ]
        layers += _recurrent_stack(config, n_features * config.conv_channels, LSTM, rng, dtype)
        n_head = config.hidden_size
    elif config.variant == "lstm":
        layers = _recurrent_stack(config, n_features, LSTM, rng, dtype)
        n_head = config.hidden_size
    elif config.variant == "rnn":
        layers = _recurrent_stack(config, n_features, SimpleRNN, rng, dtype)
        n_head = config.hidden_size
    else:
        layers = [AddChannel()]
        for index, rate in enumerate(config.dropout_schedule):
            in_channels = 1 if index == 0 else config.conv_channels
            layers.append(ConvLSTM(n_features, in_channels, config.conv_channels, config.conv_kernel, rng=rng, dtype=dtype))
            layers.append(Dropout(rate))
        layers.append(TimeFlatten())
        n_head = n_features * config.conv_channels

    layers += [LastStep(), Dense(n_head, 1, rng=rng, dtype=dtype), Sigmoid()]
    return NeuralForecaster(config, Sequential(layers, dtype=dtype))


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


@dataclass(eq=False)
class Checkpoint:
    """Weights of the best validation epoch plus everything needed to reproduce them"""

    architecture: ArchitectureConfig
    parameters: Dict[str, np.ndarray]
    optimizer: Dict[str, float] = field(default_factory=dict)
    optimizer_state: Dict[str, np.ndarray] = field(default_factory=dict)
    registry_hash: str = ""
    trace: List[Dict[str, float]] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: Optional[float] = None

    @property
    def variant(self) -> str:
        return self.architecture.variant

    @property
    def window(self) -> int:
        return self.architecture.window

    def restore(self):
        """Rebuild the model and load the stored weights"""
        model = build_model(self.architecture)
        model.load_state(self.parameters)
        return model

    def to_container(self) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
        header = {
            "format": "checkpoint",
            "architecture": self.architecture.to_dict(),
            "seed": self.architecture.seed,
            "optimizer": self.optimizer,
            "registry_hash": self.registry_hash,
            "trace": self.trace,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
        }
        arrays = {f"param:{name}": value for name, value in self.parameters.items()}
        arrays.update({f"opt:{name}": value for name, value in self.optimizer_state.items()})
        return header, arrays

    @classmethod
    def from_container(cls, header: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> "Checkpoint":
        return cls(
            architecture=ArchitectureConfig.from_dict(header["architecture"]),
            parameters={k[len("param:"):]: v for k, v in arrays.items() if k.startswith("param:")},
            optimizer=dict(header.get("optimizer", {})),
            optimizer_state={k[len("opt:"):]: v for k, v in arrays.items() if k.startswith("opt:")},
            registry_hash=header.get("registry_hash", ""),
            trace=list(header.get("trace", [])),
            best_epoch=int(header.get("best_epoch", 0)),
            best_val_loss=header.get("best_val_loss"),
        )


@dataclass(eq=False)
class TrainingResult:
    checkpoint: Checkpoint
    trace: List[Dict[str, float]]
    model: Any


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


def _dataset_loss(model, dataset: WindowedDataset) -> Optional[float]:
    if not len(dataset):
        return None
    loss, _ = grouped_mse(predict_samples(model, dataset), dataset.labels.astype(np.float64), dataset.bond_ids)
    return loss


def _check_dataset(config: ArchitectureConfig, dataset: WindowedDataset):
    if dataset.window != config.window or dataset.n_features != config.n_features:
        raise ShapeError(
            f"Dataset windows are {dataset.window} x {dataset.n_features}; "
            f"the model expects {config.window} x {config.n_features}"
        )


def _train_neural(model: NeuralForecaster, train: WindowedDataset, val: WindowedDataset, config: ArchitectureConfig):
    network = model.network
    network.reseed(derive_seed(config.seed, "dropout"))
    optimizer = RMSProp(config.learning_rate, config.rho, config.epsilon)
    rng = make_rng(config.seed, "epochs")
    params = network.parameters()

    trace: List[Dict[str, float]] = []
    best_state = network.state_dict()
    best_optimizer: Dict[str, np.ndarray] = {}
    best_loss, best_epoch, stale = np.inf, 0, 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        if config.max_samples_per_epoch is not None:
            order = order[:config.max_samples_per_epoch]
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            index = order[start:start + config.batch_size]
            network.zero_grad()
            pred = network.forward(train.inputs[index], training=True)
            loss, dpred = grouped_mse(pred, train.labels[index], train.bond_ids[index])
            if not np.isfinite(loss):
                norms = {name: float(np.linalg.norm(value)) for name, value in params.items()}
                largest = max(norms, key=norms.get)
                raise NumericalError(
                    f"Loss became {loss} at epoch {epoch}, batch {start // config.batch_size} "
                    f"(learning rate {config.learning_rate}, init seed {config.seed}, "
                    f"largest parameter {largest} with norm {norms[largest]:.3g})"
                )
            network.backward(dpred)
            optimizer.step(params, network.gradients())
            batch_losses.append(loss)

        train_loss = float(np.mean(batch_losses))
        val_loss = _dataset_loss(model, val)
        score = train_loss if val_loss is None else val_loss
        trace.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        logger.debug(f"{config.display_name} epoch {epoch}: train {train_loss:.6f} val {val_loss}")
        if score < best_loss:
            best_loss, best_epoch, stale = score, epoch, 0
            best_state = network.state_dict()
            best_optimizer = optimizer.state_dict()
        else:
            stale += 1
            if stale >= config.patience:
                logger.info(f"⏹️ Early stop after epoch {epoch} (best epoch {best_epoch})")
                break

    network.load_state_dict(best_state)
    return trace, best_epoch, float(best_loss), best_optimizer, optimizer.hyperparameters()


def train(model, dataset: WindowedDataset, config: Optional[ArchitectureConfig] = None, registry_hash: str = "") -> TrainingResult:
    """
    Fit a model on the train split and keep the epoch with the best validation loss.

    Neural variants minimise the per-bond grouped MSE with RMSProp in shuffled
    mini-batches and stop after ``patience`` epochs without improvement. Boosting
    fits once on flattened windows; persistence has nothing to fit.

    Raises:
        NumericalError: the loss becomes NaN or infinite
        ShapeError: dataset windows do not match the architecture
    """
    config = config or model.config
    _check_dataset(config, dataset)
    train_split = dataset.subset("train")
    val_split = dataset.subset("val")
    logger.info(
        f"🚀 Training {config.display_name} (w={config.window}, seed={config.seed}) on "
        f"{len(train_split)} samples, validating on {len(val_split)}"
    )

    optimizer_state: Dict[str, np.ndarray] = {}
    optimizer: Dict[str, float] = {}
    if isinstance(model, NeuralForecaster):
        trace, best_epoch, best_loss, optimizer_state, optimizer = _train_neural(model, train_split, val_split, config)
    else:
        if isinstance(model, BoostingForecaster):
            rows = np.arange(len(train_split))
            if config.max_samples_per_epoch is not None and len(rows) > config.max_samples_per_epoch:
                rows = np.sort(make_rng(config.seed, "boosting").choice(len(rows), config.max_samples_per_epoch, replace=False))
            model.trees.fit(train_split.inputs[rows].reshape(len(rows), -1), train_split.labels[rows])
        train_loss = _dataset_loss(model, train_split)
        val_loss = _dataset_loss(model, val_split)
        trace = [{"epoch": 1, "train_loss": train_loss, "val_loss": val_loss}]
        best_epoch, best_loss = 1, val_loss if val_loss is not None else train_loss

    checkpoint = Checkpoint(
        architecture=config,
        parameters=model.state(),
        optimizer=optimizer,
        optimizer_state=optimizer_state,
        registry_hash=registry_hash or dataset.registry_hash,
        trace=trace,
        best_epoch=best_epoch,
        best_val_loss=best_loss,
    )
    logger.info(f"✅ {config.display_name} best epoch {best_epoch}, validation loss {best_loss:.6f}")
    return TrainingResult(checkpoint=checkpoint, trace=trace, model=model)


# --------------------------------------------------------------------------
# Prediction
# --------------------------------------------------------------------------


def predict_samples(model, dataset: WindowedDataset) -> np.ndarray:
    """One next-day probability per sample, using the stored windows as-is"""
    if isinstance(model, PersistenceForecaster):
        return dataset.last_labels.astype(np.float64)
    return model.predict_inputs(dataset.inputs)


def _rolling_predictions(model, dataset: WindowedDataset) -> np.ndarray:
    """
    Predict each bond day by day, replacing the prior-probability column of every
    window row with the model's own standardized prediction for the previous day.
    """
    prior_col = column(PRIOR_PD_ID)
    window = dataset.window
    predictions = np.zeros(len(dataset), dtype=np.float64)
    per_bond = {}
    for bond_id in np.unique(dataset.bond_ids):
        rows = np.flatnonzero(dataset.bond_ids == bond_id)
        per_bond[bond_id] = rows[np.argsort(dataset.end_days[rows], kind="stable")]

    # predicted[bond][day] = prediction of that day's label
    predicted: Dict[str, Dict[int, float]] = {bond_id: {} for bond_id in per_bond}
    longest = max((len(rows) for rows in per_bond.values()), default=0)
    for step in range(longest):
        batch_rows, batch_inputs = [], []
        for bond_id, rows in per_bond.items():
            if step >= len(rows):
                continue
            row = rows[step]
            inputs = np.array(dataset.inputs[row])
            mu, sigma = dataset.prior_stats.get(bond_id, (0.0, 1.0))
            end_day = int(dataset.end_days[row])
            for offset in range(window):
                day = end_day - window + 1 + offset
                previous = predicted[bond_id].get(day - 1)
                if previous is not None:
                    inputs[offset, prior_col] = (previous - mu) / sigma
            batch_rows.append(row)
            batch_inputs.append(inputs)
        outputs = model.predict_inputs(np.stack(batch_inputs))
        for row, value in zip(batch_rows, outputs):
            predictions[row] = value
            predicted[str(dataset.bond_ids[row])][int(dataset.end_days[row]) + 1] = float(value)
    return predictions


def predict(checkpoint_or_model, dataset: WindowedDataset, rolling: bool = False) -> np.ndarray:
    """
    Next-day default probabilities for every sample of ``dataset``.

    With ``rolling`` the prior-probability feature is chained from the model's own
    previous predictions instead of the labels (persistence ignores the flag).

    Raises:
        ShapeError: dataset windows do not match the checkpoint
    """
    model = checkpoint_or_model.restore() if isinstance(checkpoint_or_model, Checkpoint) else checkpoint_or_model
    _check_dataset(model.config, dataset)
    if not len(dataset):
        return np.zeros(0)
    if rolling and not isinstance(model, PersistenceForecaster):
        return _rolling_predictions(model, dataset)
    return predict_samples(model, dataset)
