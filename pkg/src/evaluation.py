"""
Evaluation: error metrics, the variant x window comparison grid and the
comparison of predictions against the latent rating path
"""

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import linregress

from .errors import DomainError, NumericalError, ShapeError
from .logger import get_logger
from .models import VARIANTS, ArchitectureConfig, Checkpoint, build_model, predict, train
from .pipeline import WindowedDataset
from .schema import BondRecord, Outcome, grades_to_probabilities
from .seeding import make_rng

logger = get_logger("evaluation")

WARNING_THRESHOLD = 0.5


def rmse_mae(pred: Sequence[float], truth: Sequence[float]) -> Tuple[float, float]:
    """
    Root mean squared error and mean absolute error.

    Raises:
        DomainError: empty input
        ShapeError: lengths differ
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape:
        raise ShapeError(f"{len(pred)} predictions for {len(truth)} targets")
    if pred.size == 0:
        raise DomainError("Cannot compute errors of an empty series")
    errors = pred - truth
    rmse = float(np.sqrt(np.mean(errors ** 2)))
    mae = float(np.mean(np.abs(errors)))
    # quadratic mean >= arithmetic mean, up to rounding
    if rmse < mae * (1.0 - 1e-12):
        raise NumericalError(f"RMSE {rmse} below MAE {mae}")
    return rmse, mae


def shuffled_label_rmse(pred: Sequence[float], truth: Sequence[float], seed: int = 0) -> float:
    """RMSE against a seeded permutation of the targets"""
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    shuffled = truth[make_rng(seed, "shuffle").permutation(len(truth))]
    return rmse_mae(pred, shuffled)[0]


def dataset_hash(dataset: WindowedDataset) -> str:
    digest = hashlib.sha256()
    for values in (dataset.inputs, dataset.labels, dataset.end_days):
        digest.update(np.ascontiguousarray(values).tobytes())
    digest.update("\n".join(dataset.bond_ids).encode())
    digest.update("\n".join(dataset.split).encode())
    return digest.hexdigest()


def held_out_samples(dataset: WindowedDataset) -> WindowedDataset:
    """The untouched test split (never contains SMOTE samples)"""
    return dataset.select((dataset.split == "test") & ~dataset.synthetic)


# --------------------------------------------------------------------------
# Rating comparison
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RegressionStats:
    slope: float
    intercept: float
    r2: Optional[float]
    n: int


def regression_stats(pred: Sequence[float], reference: Sequence[float]) -> RegressionStats:
    """Least-squares fit of predictions on the reference; R² is None for a constant reference"""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    reference = np.asarray(reference, dtype=np.float64).reshape(-1)
    if pred.shape != reference.shape:
        raise ShapeError(f"{len(pred)} predictions for {len(reference)} reference values")
    if pred.size == 0:
        raise DomainError("Cannot regress an empty series")
    if pred.size < 2 or np.ptp(reference) == 0.0:
        return RegressionStats(slope=float("nan"), intercept=float("nan"), r2=None, n=int(pred.size))
    fit = linregress(reference, pred)
    r2 = None if not np.isfinite(fit.rvalue) else float(fit.rvalue ** 2)
    return RegressionStats(slope=float(fit.slope), intercept=float(fit.intercept), r2=r2, n=int(pred.size))


def crossing_day(days: Sequence[int], values: Sequence[float], threshold: float = WARNING_THRESHOLD) -> Optional[int]:
    """First day on which the series reaches the threshold"""
    hits = np.flatnonzero(np.asarray(values) >= threshold)
    return int(np.asarray(days)[hits[0]]) if len(hits) else None


def lead_times(
    bond_ids: Sequence[str],
    days: Sequence[int],
    pred: Sequence[float],
    reference: Sequence[float],
    threshold: float = WARNING_THRESHOLD,
    bonds: Optional[Iterable[str]] = None,
) -> Dict[str, int]:
    """
    Reference crossing day minus prediction crossing day, per bond; positive means
    the prediction warned earlier. Bonds where either series never crosses are left out.
    """
    frame = pd.DataFrame({"bond_id": np.asarray(bond_ids), "day": days, "pred": pred, "reference": reference})
    wanted = None if bonds is None else set(bonds)
    leads = {}
    for bond_id, rows in frame.sort_values(["bond_id", "day"]).groupby("bond_id", sort=True):
        if wanted is not None and bond_id not in wanted:
            continue
        predicted = crossing_day(rows["day"], rows["pred"], threshold)
        actual = crossing_day(rows["day"], rows["reference"], threshold)
        if predicted is not None and actual is not None:
            leads[bond_id] = actual - predicted
    return leads


@dataclass(frozen=True)
class RatingComparison:
    stats: RegressionStats
    lead_times: Dict[str, int]
    threshold: float = WARNING_THRESHOLD

    @property
    def median_lead(self) -> Optional[float]:
        return float(np.median(list(self.lead_times.values()))) if self.lead_times else None


def rating_comparison(
    pred: Sequence[float],
    reference: Sequence[float],
    bond_ids: Optional[Sequence[str]] = None,
    days: Optional[Sequence[int]] = None,
    defaulted: Optional[Iterable[str]] = None,
    threshold: float = WARNING_THRESHOLD,
) -> RatingComparison:
    """Regression of predictions on reference probabilities plus early-warning lead times"""
    stats = regression_stats(pred, reference)
    leads: Dict[str, int] = {}
    if bond_ids is not None and days is not None:
        leads = lead_times(bond_ids, days, pred, reference, threshold, defaulted)
    return RatingComparison(stats=stats, lead_times=leads, threshold=threshold)


def reference_probabilities(dataset: WindowedDataset, bonds: Mapping[str, BondRecord]) -> np.ndarray:
    """
    Default probability implied by each sample's latent grade on its predicted day.

    Raises:
        DomainError: a bond has no latent grade path
    """
    reference = np.empty(len(dataset))
    for index, (bond_id, end_day) in enumerate(zip(dataset.bond_ids, dataset.end_days)):
        bond = bonds[str(bond_id)]
        if bond.latent_grades is None:
            raise DomainError(f"Bond {bond_id} has no latent grade path to compare against")
        reference[index] = bond.latent_grades[int(end_day) + 1 - bond.issue_date]
    return grades_to_probabilities(reference)


def defaulted_ids(bonds: Mapping[str, BondRecord]) -> List[str]:
    return sorted(b.bond_id for b in bonds.values() if b.outcome is Outcome.DEFAULTED)


def plot_series(
    dataset: WindowedDataset,
    pred: Sequence[float],
    reference: Optional[Sequence[float]] = None,
) -> pd.DataFrame:
    """One row per predicted bond-day: bond_id, day, predicted_p, reference_p"""
    frame = pd.DataFrame(
        {
            "bond_id": dataset.bond_ids,
            "day": dataset.end_days + 1,
            "predicted_p": np.asarray(pred, dtype=np.float64),
            "reference_p": np.nan if reference is None else np.asarray(reference, dtype=np.float64),
        }
    )
    return frame.sort_values(["bond_id", "day"], kind="stable").reset_index(drop=True)


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    variant: str
    window: int
    seed: int
    rmse: float
    mae: float
    n_samples: int
    dataset_hash: str
    slope: Optional[float] = None
    intercept: Optional[float] = None
    r2: Optional[float] = None
    median_lead: Optional[float] = None
    persistence_rmse: Optional[float] = None
    reference: str = "latent grade path"

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def evaluate(
    checkpoint_or_model,
    dataset: WindowedDataset,
    bonds: Optional[Mapping[str, BondRecord]] = None,
    rolling: bool = False,
) -> Tuple[EvalReport, pd.DataFrame]:
    """
    Score a trained model on the untouched test split.

    With ``bonds`` (records carrying latent grade paths) the report also holds the
    regression against the rating reference and the median early-warning lead time
    over defaulted test bonds.

    Returns:
        (report, plot-ready series)
    """
    model = checkpoint_or_model.restore() if isinstance(checkpoint_or_model, Checkpoint) else checkpoint_or_model
    test = held_out_samples(dataset)
    if not len(test):
        raise DomainError("The dataset has no test samples")
    pred = predict(model, test, rolling=rolling)
    rmse, mae = rmse_mae(pred, test.labels)
    persistence_rmse, _ = rmse_mae(test.last_labels, test.labels)

    extra: Dict[str, Optional[float]] = {}
    reference = None
    if bonds is not None:
        reference = reference_probabilities(test, bonds)
        comparison = rating_comparison(pred, reference, test.bond_ids, test.end_days + 1, defaulted_ids(bonds))
        extra = {
            "slope": comparison.stats.slope,
            "intercept": comparison.stats.intercept,
            "r2": comparison.stats.r2,
            "median_lead": comparison.median_lead,
        }

    config = model.config
    report = EvalReport(
        variant=config.variant,
        window=config.window,
        seed=config.seed,
        rmse=rmse,
        mae=mae,
        n_samples=len(test),
        dataset_hash=dataset_hash(dataset),
        persistence_rmse=persistence_rmse,
        **extra,
    )
    logger.info(f"📋 {config.display_name} w={config.window} seed={config.seed}: RMSE {rmse:.4f} MAE {mae:.4f}")
    return report, plot_series(test, pred, reference)


# --------------------------------------------------------------------------
# Comparison grid
# --------------------------------------------------------------------------


ArchitectureFactory = Callable[[str, int, int], ArchitectureConfig]


def _default_factory(variant: str, window: int, seed: int) -> ArchitectureConfig:
    return ArchitectureConfig(variant=variant, window=window, seed=seed)


@dataclass
class GridResult:
    runs: pd.DataFrame  # one row per (variant, window, seed)
    table: pd.DataFrame  # one row per (variant, window) with mean, std and top-2 marks
    checkpoints: Dict[Tuple[str, int, int], Checkpoint] = field(default_factory=dict)


def summarize_grid(runs: pd.DataFrame, variants: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """
    Mean and std of RMSE and MAE over seeds per (variant, window), with the two best
    variants of each window marked. Ties go to the variant listed first.
    """
    order = list(variants) if variants is not None else list(VARIANTS)
    order += sorted(set(runs["variant"]) - set(order))
    rank = {v: i for i, v in enumerate(order)}
    table = (
        runs.groupby(["variant", "window"], sort=False)
        .agg(
            rmse_mean=("rmse", "mean"),
            rmse_std=("rmse", lambda s: float(np.std(s))),
            mae_mean=("mae", "mean"),
            mae_std=("mae", lambda s: float(np.std(s))),
            n_seeds=("seed", "nunique"),
        )
        .reset_index()
    )
    table["variant_rank"] = table["variant"].map(rank)
    for metric in ("rmse", "mae"):
        top = f"{metric}_top2"
        table[top] = False
        for _, cell in table.groupby("window"):
            best = cell.sort_values([f"{metric}_mean", "variant_rank"], kind="stable").index[:2]
            table.loc[best, top] = True
    table = table.sort_values(["variant_rank", "window"], kind="stable").drop(columns="variant_rank")
    return table.reset_index(drop=True)


def comparison_grid(
    datasets: Mapping[int, WindowedDataset],
    variants: Sequence[str],
    seeds: Sequence[int],
    factory: ArchitectureFactory = _default_factory,
    bonds: Optional[Mapping[str, BondRecord]] = None,
    jobs: int = 1,
) -> GridResult:
    """
    Train and test every (variant, window, seed) cell.

    ``datasets`` maps window size to its preprocessed dataset. Cells are
    independent and run on ``jobs`` threads.
    """
    cells = [(variant, window, seed) for variant in variants for window in sorted(datasets) for seed in seeds]
    logger.info(f"🚀 Comparison grid: {len(variants)} variants x {len(datasets)} windows x {len(seeds)} seeds")

    def run(cell) -> Tuple[EvalReport, Checkpoint]:
        variant, window, seed = cell
        architecture = factory(variant, window, seed)
        result = train(build_model(architecture), datasets[window], architecture)
        report, _ = evaluate(result.model, datasets[window], bonds)
        return report, result.checkpoint

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run, cells))
    else:
        outcomes = [run(cell) for cell in cells]

    runs = pd.DataFrame([report.to_dict() for report, _ in outcomes])
    table = summarize_grid(runs, variants)
    logger.info(f"✅ Comparison grid finished ({len(cells)} runs)")
    return GridResult(
        runs=runs,
        table=table,
        checkpoints={cell: checkpoint for cell, (_, checkpoint) in zip(cells, outcomes)},
    )
