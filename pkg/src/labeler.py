"""
Daily default-probability labels.

Three estimators per bond-day, integrated by a fixed weighted average:
  - clustering: VB-GMM grade of the day's standardized features, mapped to a probability
  - credit spread: break-even default probability implied by the smoothed spread
  - backward: inferred from the bond's terminal outcome (default or maturity)
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.cluster.vq import kmeans2

from .errors import ConfigError, DomainError, ShapeError
from .logger import get_logger
from .pipeline import fill_missing, standardize
from .schema import (
    N_GRADES,
    PRIOR_PD_ID,
    RISK_SPREAD_ID,
    TREASURY_RATE_ID,
    YIELD_TO_MATURITY_ID,
    BondRecord,
    FeatureRegistry,
    LabelSeries,
    Outcome,
    RatingGrade,
    build_default_registry,
    column,
    grade_to_probability,
    rating_letter,
)
from .seeding import derive_seed
from .vbgmm import GmmModel, fit_vb_gmm, grade_components

logger = get_logger("labeler")


@dataclass(frozen=True)
class SpreadParams:
    loss_rate: float = 0.70
    floor: float = 0.05
    cap: float = 1.0
    ma_window: int = 5

    def __post_init__(self):
        problems = []
        if not 0.0 < self.loss_rate <= 1.0:
            problems.append(f"labeler.loss_rate must lie in (0, 1] (got {self.loss_rate})")
        if not 0.0 < self.floor < self.cap <= 1.0:
            problems.append(f"labeler.floor/cap must satisfy 0 < floor < cap <= 1 (got {self.floor}, {self.cap})")
        if self.ma_window < 1:
            problems.append(f"labeler.ma_window must be >= 1 (got {self.ma_window})")
        if problems:
            raise ConfigError(problems)


@dataclass(frozen=True)
class BackwardParams:
    n_accel: int = 120

    def __post_init__(self):
        if self.n_accel <= 0:
            raise ConfigError(f"labeler.n_accel must be > 0 (got {self.n_accel})")


@dataclass(frozen=True)
class CombineWeights:
    gmm: float = 0.3
    cs: float = 0.3
    bwd: float = 0.4
    prior_init: float = 0.5

    def __post_init__(self):
        problems = []
        weights = (self.gmm, self.cs, self.bwd)
        if min(weights) < 0:
            problems.append(f"labeler.weights must be non-negative (got {list(weights)})")
        if not math.isclose(sum(weights), 1.0, rel_tol=0.0, abs_tol=1e-12):
            problems.append(f"labeler.weights must sum to 1 (got {sum(weights)})")
        if not 0.0 <= self.prior_init <= 1.0:
            problems.append(f"labeler.prior_init must lie in [0, 1] (got {self.prior_init})")
        if problems:
            raise ConfigError(problems)

    @classmethod
    def parse(cls, text: str, prior_init: float = 0.5) -> "CombineWeights":
        """'0.3,0.3,0.4' -> CombineWeights"""
        try:
            gmm, cs, bwd = (float(part) for part in text.split(","))
        except ValueError:
            raise ConfigError(f"labeler.weights must be three comma-separated numbers (got {text!r})")
        return cls(gmm=gmm, cs=cs, bwd=bwd, prior_init=prior_init)

    def combine(self, p_gmm, p_cs, p_bwd) -> np.ndarray:
        combined = self.gmm * np.asarray(p_gmm) + self.cs * np.asarray(p_cs) + self.bwd * np.asarray(p_bwd)
        # a convex combination of [0, 1] values; clip rounding only
        return np.clip(combined, 0.0, 1.0)


@dataclass(frozen=True)
class LabelSettings:
    n_components: int = N_GRADES
    max_iter: int = 200
    tol: float = 1e-6
    seed: int = 0
    # Cap on pooled rows used to fit the mixture; None fits on every bond-day
    max_fit_rows: Optional[int] = 20000
    spread: SpreadParams = field(default_factory=SpreadParams)
    backward: BackwardParams = field(default_factory=BackwardParams)
    weights: CombineWeights = field(default_factory=CombineWeights)

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


# --------------------------------------------------------------------------
# Estimators
# --------------------------------------------------------------------------


def gmm_probability(model: GmmModel, row: np.ndarray) -> float:
    """Probability of the grade whose component wins the row (ties -> riskier grade)"""
    return float(model.probabilities(np.asarray(row, dtype=np.float64).reshape(1, -1))[0])


def _check_rates(yields: np.ndarray, riskfree: np.ndarray, params: SpreadParams):
    yields = np.asarray(yields, dtype=np.float64)
    riskfree = np.asarray(riskfree, dtype=np.float64)
    if yields.shape != riskfree.shape or yields.ndim != 1:
        raise ShapeError(f"Yield and risk-free series must be aligned vectors, got {yields.shape} and {riskfree.shape}")
    if np.any(~np.isfinite(yields)) or np.any(~np.isfinite(riskfree)):
        raise DomainError("Yield and risk-free series must be fully observed")
    if np.any(yields <= -params.loss_rate):
        raise DomainError(f"Yield to maturity <= -{params.loss_rate} makes the spread estimator undefined")
    return yields, riskfree


def smoothed_spread(spread: np.ndarray, ma_window: int) -> np.ndarray:
    """Trailing moving average; the first days average over what is available"""
    if ma_window == 1:
        return np.asarray(spread, dtype=np.float64)
    return pd.Series(spread, dtype=np.float64).rolling(ma_window, min_periods=1).mean().to_numpy()


def spread_probability_raw(yields, riskfree, params: SpreadParams = SpreadParams()) -> np.ndarray:
    """
    Unclamped break-even default probability cs_w / (r_b + loss_rate).

    Solves (1 - p) * r_b - loss_rate * p = r_f for p with the spread smoothed
    over ``params.ma_window`` days.
    """
    yields, riskfree = _check_rates(yields, riskfree, params)
    spread = smoothed_spread(yields - riskfree, params.ma_window)
    return spread / (yields + params.loss_rate)


def spread_probability(yields, riskfree, params: SpreadParams = SpreadParams()) -> np.ndarray:
    """Spread-implied probability clamped to [floor, cap]"""
    return np.clip(spread_probability_raw(yields, riskfree, params), params.floor, params.cap)


def backward_defaulted(default_date: int, day: int, params: BackwardParams = BackwardParams()) -> float:
    """N / (N + t) with t the trading days left until default"""
    if day > default_date:
        raise DomainError(f"Day {day} lies after the default date {default_date}")
    return params.n_accel / (params.n_accel + (default_date - day))


def backward_defaulted_series(bond: BondRecord, params: BackwardParams = BackwardParams()) -> np.ndarray:
    days = bond.days
    remaining = np.maximum(bond.default_date - days, 0)
    return params.n_accel / (params.n_accel + remaining.astype(np.float64))


def backward_matured(issue_grade, final_grade, elapsed: float, total: float) -> float:
    """Linear path from the issue-grade probability to the final-grade probability"""
    if total <= 0:
        raise DomainError(f"Total life must be positive, got {total}")
    if not 0 <= elapsed <= total:
        raise DomainError(f"Elapsed time {elapsed} outside [0, {total}]")
    p_start = grade_to_probability(issue_grade)
    p_end = grade_to_probability(final_grade)
    return elapsed * (p_end - p_start) / total + p_start


def interpolate_matured(issue_grade, final_grade, n_days: int) -> np.ndarray:
    """
    backward_matured on every row of a life of n_days rows.

    Elapsed time is counted in days since issuance, so the issue row is elapsed 0
    and the maturity row is elapsed T_i = n_days - 1 (end_date - issue_date).
    """
    p_start = grade_to_probability(issue_grade)
    p_end = grade_to_probability(final_grade)
    if n_days == 1:
        return np.array([p_end])
    total = n_days - 1
    elapsed = np.arange(n_days, dtype=np.float64)
    path = elapsed * (p_end - p_start) / total + p_start
    path[-1] = p_end
    return path


def backward_probability(bond: BondRecord, params: BackwardParams = BackwardParams()) -> np.ndarray:
    if bond.outcome is Outcome.DEFAULTED:
        return backward_defaulted_series(bond, params)
    # low-rated active bonds follow the matured path towards their latest grade
    return interpolate_matured(RatingGrade(bond.issue_grade), RatingGrade(bond.final_grade), bond.n_days)


# --------------------------------------------------------------------------
# Integration
# --------------------------------------------------------------------------


def clustering_rows(standardized: BondRecord, registry: FeatureRegistry) -> np.ndarray:
    return standardized.features[:, registry.clustering_columns()]


def risk_column(registry: FeatureRegistry) -> int:
    """Position of the risk spread inside the clustering matrix"""
    return registry.clustering_columns().index(column(RISK_SPREAD_ID))


def annotate(
    bond: BondRecord,
    gmm: GmmModel,
    spread: SpreadParams = SpreadParams(),
    backward: BackwardParams = BackwardParams(),
    weights: CombineWeights = CombineWeights(),
    registry: Optional[FeatureRegistry] = None,
    standardized: Optional[BondRecord] = None,
) -> LabelSeries:
    """
    Label every day of a filled bond.

    The clustering estimate uses the bond's standardized features (computed here
    unless passed in); the spread estimate uses the raw yield and treasury columns.
    """
    registry = registry or build_default_registry()
    if standardized is None:
        standardized, _, _ = standardize(bond)

    p_gmm = gmm.probabilities(clustering_rows(standardized, registry))
    p_cs = spread_probability(bond.feature(YIELD_TO_MATURITY_ID), bond.feature(TREASURY_RATE_ID), spread)
    p_bwd = backward_probability(bond, backward)
    return LabelSeries(
        bond_id=bond.bond_id,
        start_day=bond.issue_date,
        p_gmm=p_gmm,
        p_cs=p_cs,
        p_bwd=p_bwd,
        p_integrated=weights.combine(p_gmm, p_cs, p_bwd),
    )


def prior_column(series: LabelSeries, prior_init: float = 0.5) -> np.ndarray:
    """Integrated label of the previous day; the first day gets prior_init"""
    prior = np.empty(len(series))
    prior[0] = prior_init
    prior[1:] = series.p_integrated[:-1]
    return prior


def apply_prior_column(bond: BondRecord, series: LabelSeries, prior_init: float = 0.5) -> BondRecord:
    if series.bond_id != bond.bond_id or len(series) != bond.n_days:
        raise ShapeError(f"Labels {series.bond_id} ({len(series)} days) do not match bond {bond.bond_id}")
    features = np.array(bond.features)
    features[:, column(PRIOR_PD_ID)] = prior_column(series, prior_init)
    return bond.with_features(features)


@dataclass(frozen=True, eq=False)
class LabelingResult:
    bonds: List[BondRecord]  # filled, with the prior column written
    labels: List[LabelSeries]
    gmm: GmmModel

    def labels_by_bond(self) -> Dict[str, LabelSeries]:
        return {series.bond_id: series for series in self.labels}


def pooled_rows(standardized: Sequence[BondRecord], registry: FeatureRegistry, settings: LabelSettings) -> np.ndarray:
    rows = np.concatenate([clustering_rows(b, registry) for b in standardized])
    if settings.max_fit_rows is not None and len(rows) > settings.max_fit_rows:
        rng = np.random.default_rng(derive_seed(settings.seed, "labeler", "subsample"))
        keep = np.sort(rng.choice(len(rows), size=settings.max_fit_rows, replace=False))
        logger.info(f"📋 Fitting the mixture on {settings.max_fit_rows} of {len(rows)} bond-days")
        rows = rows[keep]
    return rows


def label_market(
    bonds: Sequence[BondRecord],
    registry: Optional[FeatureRegistry] = None,
    settings: LabelSettings = LabelSettings(),
    jobs: int = 1,
) -> LabelingResult:
    """
    fill -> standardize -> one pooled VB-GMM fit -> annotate every bond -> prior column.

    Bonds are processed in bond_id order, so the result does not depend on input order.
    """
    registry = registry or build_default_registry()
    ordered = sorted(bonds, key=lambda b: b.bond_id)
    logger.info(f"🚀 Labeling {len(ordered)} bonds")

    filled = [fill_missing(b, registry) for b in ordered]
    standardized = [standardize(b)[0] for b in filled]

    gmm = fit_vb_gmm(
        pooled_rows(standardized, registry, settings),
        n_components=settings.n_components,
        max_iter=settings.max_iter,
        seed=derive_seed(settings.seed, "labeler", "gmm"),
        tol=settings.tol,
        risk_column=risk_column(registry),
    )
    logger.info(f"✅ VB-GMM fitted in {gmm.n_iter} iterations (converged={gmm.converged})")

    def label(index: int) -> LabelSeries:
        return annotate(
            filled[index],
            gmm,
            settings.spread,
            settings.backward,
            settings.weights,
            registry,
            standardized=standardized[index],
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            labels = list(executor.map(label, range(len(filled))))
    else:
        labels = [label(i) for i in range(len(filled))]

    labeled = [apply_prior_column(b, s, settings.weights.prior_init) for b, s in zip(filled, labels)]
    mean_label = float(np.mean(np.concatenate([s.p_integrated for s in labels]))) if labels else 0.0
    logger.info(f"✅ Labeled {sum(len(s) for s in labels)} bond-days (mean label {mean_label:.4f})")
    return LabelingResult(bonds=labeled, labels=labels, gmm=gmm)


def compare_cluster_distributions(
    observations: np.ndarray,
    gmm: GmmModel,
    issue_grades: Sequence[int],
    seed: int = 0,
    risk_col: Optional[int] = None,
) -> pd.DataFrame:
    """
    Per-grade shares from the VB-GMM, from K-Means on the same rows and from issue ratings.

    K-Means clusters are graded with the same riskiest-spread-first rule as the mixture.
    """
    observations = np.asarray(observations, dtype=np.float64)
    n_components = gmm.n_components
    centroids, assignment = kmeans2(
        observations, n_components, minit="++", seed=np.random.default_rng(seed)
    )
    kmeans_grades = grade_components(centroids, risk_col)[assignment]

    def shares(grades) -> np.ndarray:
        grades = np.asarray(grades, dtype=int)
        counts = np.bincount(grades, minlength=N_GRADES + 1)[1:]
        return counts / max(len(grades), 1)

    vb_shares = gmm.grade_shares(observations)
    frame = pd.DataFrame(
        {
            "grade": np.arange(1, N_GRADES + 1),
            "letter": [rating_letter(g) for g in range(1, N_GRADES + 1)],
            "vb_gmm": [vb_shares[g] for g in range(1, N_GRADES + 1)],
            "kmeans": shares(kmeans_grades),
            "issue_rating": shares(issue_grades),
        }
    )
    return frame


def top_grades(frame: pd.DataFrame, source: str = "vb_gmm", n: int = 2) -> List[int]:
    """The n most populated grades of one distribution column"""
    ranked = frame.sort_values([source, "grade"], ascending=[False, True], kind="stable")
    return [int(g) for g in ranked["grade"].head(n)]

