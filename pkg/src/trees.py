"""
Gradient-boosted regression trees on quantile-binned features
"""

from typing import Dict, Optional

import numpy as np

from .errors import DomainError, ShapeError
from .logger import get_logger

logger = get_logger("trees")


class GradientBoostedTrees:
    """
    Squared-error boosting of fixed-depth trees.

    Starts from the training-label mean; each round fits a tree to the residuals
    and adds ``shrinkage`` times its prediction. Split candidates are per-feature
    quantile edges, and a row goes left when its value is <= the edge.
    """

    def __init__(self, n_rounds: int = 200, max_depth: int = 3, shrinkage: float = 0.1, n_bins: int = 64):
        if n_rounds < 0 or max_depth < 1 or not 0.0 < shrinkage <= 1.0 or n_bins < 2:
            raise DomainError(
                f"Invalid boosting settings: rounds={n_rounds}, depth={max_depth}, "
                f"shrinkage={shrinkage}, bins={n_bins}"
            )
        self.n_rounds = n_rounds
        self.max_depth = max_depth
        self.shrinkage = shrinkage
        self.n_bins = n_bins
        self.n_nodes = 2 ** (max_depth + 1) - 1
        self.base: float = 0.0
        self.features = np.zeros((0, self.n_nodes), dtype=np.int64)
        self.thresholds = np.zeros((0, self.n_nodes), dtype=np.float32)
        self.values = np.zeros((0, self.n_nodes), dtype=np.float32)
        self.n_inputs: Optional[int] = None

    def _edges(self, x: np.ndarray):
        quantiles = np.linspace(0.0, 1.0, self.n_bins + 1)[1:-1]
        edges = np.full((x.shape[1], self.n_bins - 1), np.inf, dtype=np.float32)
        n_edges = np.zeros(x.shape[1], dtype=np.int64)
        for f in range(x.shape[1]):
            cuts = np.unique(np.quantile(x[:, f].astype(np.float64), quantiles).astype(np.float32))
            edges[f, :len(cuts)] = cuts
            n_edges[f] = len(cuts)
        return edges, n_edges

    def _bin(self, x: np.ndarray, edges: np.ndarray, n_edges: np.ndarray) -> np.ndarray:
        binned = np.empty(x.shape, dtype=np.int64)
        for f in range(x.shape[1]):
            binned[:, f] = np.searchsorted(edges[f, :n_edges[f]], x[:, f], side="left")
        return binned

    def _best_split(self, binned, residual, n_edges):
        n_rows, n_features = binned.shape
        stride = self.n_bins
        flat = (binned + np.arange(n_features) * stride).ravel()
        weights = np.broadcast_to(residual[:, None], binned.shape).ravel()
        size = n_features * stride
        sums = np.bincount(flat, weights=weights, minlength=size).reshape(n_features, stride)
        counts = np.bincount(flat, minlength=size).reshape(n_features, stride)

        # splitting after bin b sends bins <= b left
        left_sum = np.cumsum(sums, axis=1)[:, :-1]
        left_n = np.cumsum(counts, axis=1)[:, :-1]
        total_sum, total_n = residual.sum(), n_rows
        right_sum = total_sum - left_sum
        right_n = total_n - left_n
        valid = (left_n > 0) & (right_n > 0) & (np.arange(stride - 1)[None, :] < n_edges[:, None])
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = left_sum ** 2 / left_n + right_sum ** 2 / right_n - total_sum ** 2 / total_n
        gain = np.where(valid, gain, -np.inf)
        best = int(np.argmax(gain))
        f, b = divmod(best, stride - 1)
        if not np.isfinite(gain[f, b]) or gain[f, b] <= 1e-12:
            return None
        return f, b

    def _grow(self, tree: Dict[str, np.ndarray], node: int, rows: np.ndarray, depth: int,
              binned, residual, edges, n_edges):
        tree["values"][node] = residual[rows].mean()
        if depth == self.max_depth or len(rows) < 2:
            return
        split = self._best_split(binned[rows], residual[rows], n_edges)
        if split is None:
            return
        f, b = split
        tree["features"][node] = f
        tree["thresholds"][node] = edges[f, b]
        goes_left = binned[rows, f] <= b
        self._grow(tree, 2 * node + 1, rows[goes_left], depth + 1, binned, residual, edges, n_edges)
        self._grow(tree, 2 * node + 2, rows[~goes_left], depth + 1, binned, residual, edges, n_edges)

    def fit(self, x: np.ndarray, y: np.ndarray) -> "GradientBoostedTrees":
        x = np.asarray(x, dtype=np.float32)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if x.ndim != 2 or len(x) != len(y):
            raise ShapeError(f"Boosting needs a (rows, features) matrix aligned with targets, got {x.shape} and {y.shape}")
        if len(y) == 0:
            raise DomainError("Cannot fit boosting on zero rows")
        self.n_inputs = x.shape[1]
        self.base = float(np.float32(y.mean()))

        edges, n_edges = self._edges(x)
        binned = self._bin(x, edges, n_edges)
        prediction = np.full(len(y), self.base)
        features, thresholds, values = [], [], []
        for _ in range(self.n_rounds):
            tree = {
                "features": np.full(self.n_nodes, -1, dtype=np.int64),
                "thresholds": np.zeros(self.n_nodes, dtype=np.float32),
                "values": np.zeros(self.n_nodes, dtype=np.float32),
            }
            residual = y - prediction
            self._grow(tree, 0, np.arange(len(y)), 0, binned, residual, edges, n_edges)
            features.append(tree["features"])
            thresholds.append(tree["thresholds"])
            values.append(tree["values"])
            prediction += self.shrinkage * self._tree_output(x, tree["features"], tree["thresholds"], tree["values"])

        if features:
            self.features = np.stack(features)
            self.thresholds = np.stack(thresholds)
            self.values = np.stack(values)
        logger.debug(f"Boosting: {self.n_rounds} rounds, train MSE {np.mean((prediction - y) ** 2):.6f}")
        return self

    def _tree_output(self, x, features, thresholds, values) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int64)
        rows = np.arange(len(x))
        for _ in range(self.max_depth):
            feature = features[node]
            internal = feature >= 0
            left = x[rows, np.maximum(feature, 0)] <= thresholds[node]
            node = np.where(internal, np.where(left, 2 * node + 1, 2 * node + 2), node)
        return values[node].astype(np.float64)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        if self.n_inputs is not None and (x.ndim != 2 or x.shape[1] != self.n_inputs):
            raise ShapeError(f"Boosting was fitted on {self.n_inputs} inputs, got shape {x.shape}")
        prediction = np.full(len(x), self.base)
        for t in range(len(self.features)):
            prediction += self.shrinkage * self._tree_output(x, self.features[t], self.thresholds[t], self.values[t])
        return prediction

    def to_arrays(self) -> Dict[str, np.ndarray]:
        return {
            "trees.features": self.features.astype(np.float32),
            "trees.thresholds": self.thresholds,
            "trees.values": self.values,
            "trees.base": np.array([self.base], dtype=np.float32),
        }

    def load_arrays(self, arrays: Dict[str, np.ndarray], n_inputs: int):
        self.features = arrays["trees.features"].astype(np.int64).reshape(-1, self.n_nodes)
        self.thresholds = arrays["trees.thresholds"].astype(np.float32).reshape(-1, self.n_nodes)
        self.values = arrays["trees.values"].astype(np.float32).reshape(-1, self.n_nodes)
        self.base = float(arrays["trees.base"][0])
        self.n_inputs = n_inputs
