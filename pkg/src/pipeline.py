"""
Preprocessing: missing-value fill, per-bond standardization, sliding windows,
stratified by-bond split and SMOTE balancing of the training split.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError, InsufficientSamplesError, MissingColumnError
from .logger import get_logger
from .schema import (
    N_FEATURES,
    PRIOR_PD_ID,
    BondRecord,
    FeatureRegistry,
    LabelSeries,
    build_default_registry,
    column,
)

logger = get_logger("pipeline")

SPLITS = ("train", "val", "test")
DEFAULT_SPLIT_RATIOS = (0.8, 0.1, 0.1)


def fill_missing(bond: BondRecord, registry: Optional[FeatureRegistry] = None) -> BondRecord:
    """
    Fill absent cells column by column.

    Interior gaps are linearly interpolated; leading and trailing gaps take the
    nearest observed value. Derived columns that are still entirely absent are
    left untouched (labeling writes them).

    Raises:
        MissingColumnError: a non-derived column has no observed value
    """
    registry = registry or build_default_registry()
    absent = bond.absent_mask()
    if not absent.any():
        return bond

    derived = set(registry.derived_columns())
    features = np.array(bond.features)
    rows = np.arange(bond.n_days)
    for col in np.flatnonzero(absent.any(axis=0)):
        observed = ~absent[:, col]
        if not observed.any():
            if col in derived:
                continue
            spec = registry.entries[col]
            raise MissingColumnError(bond.bond_id, spec.id, spec.name)
        # np.interp holds the end values constant outside the observed range
        features[:, col] = np.interp(rows, rows[observed], features[observed, col])
    return bond.with_features(features)


def standardize(bond: BondRecord) -> Tuple[BondRecord, np.ndarray, np.ndarray]:
    """
    Mean-variance standardization of every column over the bond's own period.

    Uses the population standard deviation. Constant columns become zeros and
    report sigma = 1. Columns that are still absent stay absent.

    Returns:
        (standardized bond, per-feature mu, per-feature sigma)
    """
    features = bond.features
    mu = np.mean(features, axis=0)
    sigma = np.std(features, axis=0)
    constant = sigma == 0
    sigma = np.where(constant, 1.0, sigma)
    standardized = (features - mu) / sigma
    standardized[:, constant] = 0.0
    return bond.with_features(standardized), mu, sigma


@dataclass(frozen=True, eq=False)
class WindowedDataset:
    """(sample, window, feature) tensors with next-day labels and split tags"""

    inputs: np.ndarray  # (N, w, 53)
    labels: np.ndarray  # (N,) label of day end_day + 1
    last_labels: np.ndarray  # (N,) label of end_day
    bond_ids: np.ndarray  # (N,)
    end_days: np.ndarray  # (N,) absolute trading day
    high_risk: np.ndarray  # (N,) bool
    split: np.ndarray  # (N,) one of SPLITS
    synthetic: np.ndarray  # (N,) bool, True for SMOTE samples
    window: int
    seed: int = 0
    registry_hash: str = ""
    # bond_id -> (mu, sigma) of the prior default probability column
    prior_stats: Mapping[str, Tuple[float, float]] = field(default_factory=dict)
    skipped: int = 0

    def __post_init__(self):
        n = len(self.labels)
        if self.inputs.ndim != 3 or self.inputs.shape[0] != n or self.inputs.shape[1] != self.window:
            raise DomainError(
                f"Dataset inputs have shape {self.inputs.shape}; expected ({n}, {self.window}, features)"
            )
        for name in ("last_labels", "bond_ids", "end_days", "high_risk", "split", "synthetic"):
            if len(getattr(self, name)) != n:
                raise DomainError(f"Dataset column {name} has {len(getattr(self, name))} rows, expected {n}")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.inputs.shape[2]

    def select(self, mask: np.ndarray) -> "WindowedDataset":
        return replace(
            self,
            inputs=self.inputs[mask],
            labels=self.labels[mask],
            last_labels=self.last_labels[mask],
            bond_ids=self.bond_ids[mask],
            end_days=self.end_days[mask],
            high_risk=self.high_risk[mask],
            split=self.split[mask],
            synthetic=self.synthetic[mask],
        )

    def subset(self, split: str) -> "WindowedDataset":
        return self.select(self.split == split)

    def split_counts(self) -> Dict[str, int]:
        return {name: int(np.sum(self.split == name)) for name in SPLITS}

    def class_counts(self, split: str) -> Dict[str, int]:
        mask = self.split == split
        return {
            "high": int(np.sum(self.high_risk[mask])),
            "low": int(np.sum(~self.high_risk[mask])),
        }


def make_windows(
    bonds: Sequence[BondRecord],
    labels: Mapping[str, LabelSeries],
    window: int,
    split: Optional[Mapping[str, str]] = None,
    prior_stats: Optional[Mapping[str, Tuple[float, float]]] = None,
    dtype=np.float32,
) -> WindowedDataset:
    """
    Slide a length-``window`` window over every bond.

    Sample k of a bond ends on day index e = window - 1 + k and is labeled with the
    integrated probability of day e + 1, so each bond yields T_i - window samples.
    Bonds with T_i <= window are skipped and counted.
    """
    if window < 1:
        raise DomainError(f"Window size must be >= 1, got {window}")

    parts = []
    skipped = 0
    for bond in sorted(bonds, key=lambda b: b.bond_id):
        series = labels[bond.bond_id]
        if len(series) != bond.n_days:
            raise DomainError(f"Bond {bond.bond_id}: {len(series)} labels for {bond.n_days} days")
        n_samples = bond.n_days - window
        if n_samples <= 0:
            skipped += 1
            continue
        # (T - w + 1, 53, w) -> drop the last window, which has no next-day label
        views = np.lib.stride_tricks.sliding_window_view(bond.features, window, axis=0)[:n_samples]
        ends = np.arange(window - 1, window - 1 + n_samples)
        parts.append(
            (
                np.transpose(views, (0, 2, 1)),
                series.p_integrated[ends + 1],
                series.p_integrated[ends],
                np.full(n_samples, bond.bond_id, dtype=object),
                bond.issue_date + ends,
                np.full(n_samples, bond.high_risk),
                np.full(n_samples, split.get(bond.bond_id, "train") if split else "train", dtype=object),
            )
        )

    if skipped:
        logger.warning(f"⚠️ Skipped {skipped} bond(s) with no more than {window} trading days")

    if parts:
        inputs, targets, last, ids, ends, high, splits = (np.concatenate(p) for p in zip(*parts))
    else:
        inputs = np.zeros((0, window, N_FEATURES))
        targets = last = np.zeros(0)
        ids = splits = np.zeros(0, dtype=object)
        ends = np.zeros(0, dtype=np.int64)
        high = np.zeros(0, dtype=bool)

    return WindowedDataset(
        inputs=inputs.astype(dtype),
        labels=targets.astype(dtype),
        last_labels=last.astype(dtype),
        bond_ids=ids.astype(str),
        end_days=ends.astype(np.int64),
        high_risk=high.astype(bool),
        split=splits.astype(str),
        synthetic=np.zeros(len(targets), dtype=bool),
        window=window,
        prior_stats=dict(prior_stats or {}),
        skipped=skipped,
    )


def split_bonds(
    bonds: Sequence[BondRecord],
    seed: int,
    ratios: Sequence[float] = DEFAULT_SPLIT_RATIOS,
) -> Dict[str, str]:
    """
    Assign every bond to train/val/test, independently within each risk class.

    Each class is shuffled with the seed (after sorting by bond id, so input order
    does not matter); val and test each receive max(1, floor(ratio * n)) bonds and
    the rounding residue goes to train.

    Raises:
        InsufficientSamplesError: a class has fewer than 3 bonds
    """
    rng = np.random.default_rng(seed)
    assignment: Dict[str, str] = {}
    for high_risk in (True, False):
        members = sorted(b.bond_id for b in bonds if b.high_risk == high_risk)
        label = "high" if high_risk else "low"
        if len(members) < 3:
            raise InsufficientSamplesError(
                f"Risk class '{label}' has {len(members)} bond(s); at least 3 are needed to populate train/val/test"
            )
        order = [members[i] for i in rng.permutation(len(members))]
        n_val = max(1, math.floor(ratios[1] * len(members)))
        n_test = max(1, math.floor(ratios[2] * len(members)))
        for bond_id in order[:n_val]:
            assignment[bond_id] = "val"
        for bond_id in order[n_val:n_val + n_test]:
            assignment[bond_id] = "test"
        for bond_id in order[n_val + n_test:]:
            assignment[bond_id] = "train"
    return assignment


@dataclass(frozen=True)
class SmoteResult:
    """Synthetic minority samples and how each was built"""

    inputs: np.ndarray  # (n_synthetic, ...) same trailing shape as the source
    labels: np.ndarray
    parents: np.ndarray  # (n_synthetic, 2) source indexes (sample, neighbour)
    u: np.ndarray  # interpolation factor of each sample

    def __len__(self) -> int:
        return len(self.labels)


def smote_balance(
    inputs: np.ndarray,
    labels: np.ndarray,
    minority: np.ndarray,
    target_ratio: float = 1.0,
    k_neighbors: int = 5,
    seed: int = 0,
) -> SmoteResult:
    """
    Oversample the minority class by interpolating towards nearest minority neighbours.

    Each synthetic sample is s + u * (nn - s) on the flattened window vectors, with
    nn one of the k nearest minority neighbours of s (Euclidean) and u ~ U(0, 1);
    its label is interpolated with the same u. Samples are generated until the
    minority:majority count ratio reaches ``target_ratio``.

    Raises:
        InsufficientSamplesError: fewer than k_neighbors + 1 minority samples
    """
    minority = np.asarray(minority, dtype=bool)
    minority_index = np.flatnonzero(minority)
    n_minority = len(minority_index)
    n_majority = int(np.sum(~minority))
    needed = max(0, math.ceil(target_ratio * n_majority) - n_minority)

    empty = SmoteResult(
        inputs=np.zeros((0,) + inputs.shape[1:], dtype=inputs.dtype),
        labels=np.zeros(0, dtype=labels.dtype),
        parents=np.zeros((0, 2), dtype=np.int64),
        u=np.zeros(0),
    )
    if needed == 0:
        return empty
    if n_minority < k_neighbors + 1:
        raise InsufficientSamplesError(
            f"SMOTE needs at least {k_neighbors + 1} minority samples, got {n_minority}"
        )

    flat = inputs[minority_index].reshape(n_minority, -1).astype(np.float64)
    _, neighbours = cKDTree(flat).query(flat, k=k_neighbors + 1)
    # drop each sample itself; under exact duplicates it may not sit in column 0
    not_self = neighbours != np.arange(n_minority)[:, None]
    not_self[not_self.all(axis=1), -1] = False
    neighbours = neighbours[not_self].reshape(n_minority, k_neighbors)

    rng = np.random.default_rng(seed)
    source = rng.integers(n_minority, size=needed)
    pick = rng.integers(k_neighbors, size=needed)
    u = rng.random(needed)
    partner = neighbours[source, pick]

    s = inputs[minority_index[source]].astype(np.float64)
    nn = inputs[minority_index[partner]].astype(np.float64)
    weights = u.reshape((-1,) + (1,) * (inputs.ndim - 1))
    synthetic = (s + weights * (nn - s)).astype(inputs.dtype)
    s_label = labels[minority_index[source]].astype(np.float64)
    nn_label = labels[minority_index[partner]].astype(np.float64)
    synthetic_labels = (s_label + u * (nn_label - s_label)).astype(labels.dtype)

    return SmoteResult(
        inputs=synthetic,
        labels=synthetic_labels,
        parents=np.stack([minority_index[source], minority_index[partner]], axis=1),
        u=u,
    )


def balance_training_split(
    dataset: WindowedDataset,
    target_ratio: float = 1.0,
    k_neighbors: int = 5,
    seed: int = 0,
) -> WindowedDataset:
    """Append SMOTE samples to the train split; val and test are never touched"""
    train_index = np.flatnonzero(dataset.split == "train")
    train = dataset.select(train_index)
    result = smote_balance(
        train.inputs, train.labels, train.high_risk, target_ratio, k_neighbors, seed
    )
    if not len(result):
        return dataset

    parents = train_index[result.parents[:, 0]]
    n = len(result)
    logger.info(
        f"⚖️ SMOTE added {n} synthetic high-risk training samples "
        f"(high:low {int(train.high_risk.sum()) + n}:{int((~train.high_risk).sum())})"
    )
    last_source = dataset.last_labels[parents].astype(np.float64)
    last_partner = dataset.last_labels[train_index[result.parents[:, 1]]].astype(np.float64)
    return replace(
        dataset,
        inputs=np.concatenate([dataset.inputs, result.inputs]),
        labels=np.concatenate([dataset.labels, result.labels]),
        last_labels=np.concatenate(
            [dataset.last_labels, (last_source + result.u * (last_partner - last_source)).astype(dataset.last_labels.dtype)]
        ),
        bond_ids=np.concatenate([dataset.bond_ids, np.char.add("smote:", dataset.bond_ids[parents])]),
        end_days=np.concatenate([dataset.end_days, dataset.end_days[parents]]),
        high_risk=np.concatenate([dataset.high_risk, np.ones(n, dtype=bool)]),
        split=np.concatenate([dataset.split, np.full(n, "train")]),
        synthetic=np.concatenate([dataset.synthetic, np.ones(n, dtype=bool)]),
    )


@dataclass(frozen=True)
class PreprocessSettings:
    window: int = 2
    seed: int = 0
    split_ratios: Tuple[float, float, float] = DEFAULT_SPLIT_RATIOS
    smote_ratio: float = 1.0
    smote_k: int = 5
    apply_smote: bool = True


def preprocess(
    bonds: Sequence[BondRecord],
    labels: Mapping[str, LabelSeries],
    settings: PreprocessSettings,
    registry: Optional[FeatureRegistry] = None,
) -> WindowedDataset:
    """fill -> standardize -> split -> windows -> SMOTE (train only)"""
    registry = registry or build_default_registry()
    prepared: List[BondRecord] = []
    prior_stats: Dict[str, Tuple[float, float]] = {}
    prior_col = column(PRIOR_PD_ID)
    for bond in sorted(bonds, key=lambda b: b.bond_id):
        standardized, mu, sigma = standardize(fill_missing(bond, registry))
        prepared.append(standardized)
        prior_stats[bond.bond_id] = (float(mu[prior_col]), float(sigma[prior_col]))

    assignment = split_bonds(prepared, settings.seed, settings.split_ratios)
    dataset = make_windows(prepared, labels, settings.window, assignment, prior_stats)
    dataset = replace(dataset, seed=settings.seed, registry_hash=registry.fingerprint())
    logger.info(
        f"🪟 Window {settings.window}: {len(dataset)} samples "
        f"(train {dataset.split_counts()['train']}, val {dataset.split_counts()['val']}, "
        f"test {dataset.split_counts()['test']})"
    )
    if settings.apply_smote:
        dataset = balance_training_split(dataset, settings.smote_ratio, settings.smote_k, settings.seed)
    return dataset
