"""
Bond data model, the 53-feature risk index registry and the 22-grade rating scale
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DomainError, ShapeError

N_GRADES = 22
N_FEATURES = 53

# Absent cells are NaN; no synthesized or loaded real value is ever NaN
ABSENT = np.nan

# Feature ids (1-based, as in the index system)
TREASURY_RATE_ID = 8
INDUSTRY_CODE_ID = 10
INDUSTRY_DEFAULT_RATE_ID = 11
REGION_DEFAULT_RATE_ID = 12
RESIDUAL_MATURITY_ID = 49
YIELD_TO_MATURITY_ID = 50
RISK_SPREAD_ID = 51
PRIOR_PD_ID = 52

# logistic(BETA * (11.5 - k)) anchors grade 1 at 0.99 and grade 22 at 0.01
GRADE_MIDPOINT = (1 + N_GRADES) / 2
GRADE_SLOPE = math.log(99.0) / (GRADE_MIDPOINT - 1)

RATING_LETTERS = (
    "AAA+", "AAA", "AAA-", "AA+", "AA", "AA-", "A+", "A", "A-",
    "BBB+", "BBB", "BBB-", "BB+", "BB", "BB-", "B+", "B", "B-",
    "CCC", "CC", "C", "D",
)


def column(feature_id: int) -> int:
    """0-based matrix column of a 1-based feature id"""
    return feature_id - 1


@dataclass(frozen=True, order=True)
class RatingGrade:
    """Clustering grade: 1 is the riskiest (about D), 22 the safest (about AAA+)"""

    grade: int

    def __post_init__(self):
        if isinstance(self.grade, bool) or int(self.grade) != self.grade:
            raise DomainError(f"Rating grade must be an integer, got {self.grade!r}")
        if not 1 <= self.grade <= N_GRADES:
            raise DomainError(f"Rating grade {self.grade} outside [1, {N_GRADES}]")
        object.__setattr__(self, "grade", int(self.grade))

    @property
    def letter(self) -> str:
        return rating_letter(self.grade)

    def __int__(self) -> int:
        return self.grade


GradeLike = Union[RatingGrade, int, float]


def _grade_value(grade: GradeLike) -> float:
    if isinstance(grade, RatingGrade):
        return float(grade.grade)
    value = float(grade)
    if not math.isfinite(value) or not 1.0 <= value <= N_GRADES:
        raise DomainError(f"Rating grade {grade!r} outside [1, {N_GRADES}]")
    return value


def grade_to_probability(grade: GradeLike) -> float:
    """
    Map a rating grade to a default probability.

    Uses the logistic 1 / (1 + exp(-g)) of the affine transfer
    g(k) = beta * (11.5 - k), beta = ln(99) / 10.5. Fractional grades are
    accepted as a continuous extension.

    Raises:
        DomainError: grade outside [1, 22]
    """
    g = GRADE_SLOPE * (GRADE_MIDPOINT - _grade_value(grade))
    return 1.0 / (1.0 + math.exp(-g))


def grades_to_probabilities(grades: Sequence[float]) -> np.ndarray:
    """Vectorized grade_to_probability"""
    grades = np.asarray(grades, dtype=np.float64)
    if grades.size and (np.any(~np.isfinite(grades)) or grades.min() < 1 or grades.max() > N_GRADES):
        raise DomainError(f"Rating grades must lie in [1, {N_GRADES}]")
    return 1.0 / (1.0 + np.exp(-GRADE_SLOPE * (GRADE_MIDPOINT - grades)))


def rating_letter(grade: GradeLike) -> str:
    """Letter rating of an integer grade (22 -> AAA+, 1 -> D)"""
    value = _grade_value(grade)
    if value != int(value):
        raise DomainError(f"Letter ratings exist for integer grades only, got {grade!r}")
    return RATING_LETTERS[N_GRADES - int(value)]


def grade_from_letter(letter: str) -> RatingGrade:
    """Inverse of rating_letter"""
    try:
        return RatingGrade(N_GRADES - RATING_LETTERS.index(letter.strip().upper()))
    except ValueError:
        raise DomainError(f"Unknown rating letter: {letter!r}")


class Dimension(str, Enum):
    MACROECONOMY = "Macroeconomy"
    INDUSTRY_REGION = "IndustryRegion"
    BASIC_FINANCIALS = "BasicFinancials"
    REPAYMENT_ABILITY = "RepaymentAbility"
    PROFITABILITY = "Profitability"
    ISSUER_CHARACTERISTICS = "IssuerCharacteristics"
    MARKET_CONDITIONS = "MarketConditions"


class Frequency(str, Enum):
    DAILY = "daily"
    MONTHLY = "monthly"
    QUARTERLY = "quarterly"


class FillRule(str, Enum):
    FORWARD_FILL = "forward-fill"
    LINEAR_INTERPOLATE = "linear-interpolate"


@dataclass(frozen=True)
class FeatureSpec:
    id: int
    name: str
    dimension: Dimension
    native_frequency: Frequency
    fill_rule: FillRule
    derived: bool = False

    def to_dict(self) -> Dict[str, object]:
        return {
            "id": self.id,
            "name": self.name,
            "dimension": self.dimension.value,
            "native_frequency": self.native_frequency.value,
            "fill_rule": self.fill_rule.value,
            "derived": self.derived,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "FeatureSpec":
        return cls(
            id=int(data["id"]),
            name=str(data["name"]),
            dimension=Dimension(data["dimension"]),
            native_frequency=Frequency(data["native_frequency"]),
            fill_rule=FillRule(data["fill_rule"]),
            derived=bool(data.get("derived", False)),
        )


@dataclass(frozen=True)
class FeatureRegistry:
    """Ordered risk index system; entries[i] describes matrix column i"""

    entries: Tuple[FeatureSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if len(self.entries) != N_FEATURES:
            raise ShapeError(f"Registry needs {N_FEATURES} entries, got {len(self.entries)}")
        ids = [e.id for e in self.entries]
        if ids != list(range(1, N_FEATURES + 1)):
            raise ShapeError("Registry ids must run 1..53 in order")
        if len({e.name for e in self.entries}) != N_FEATURES:
            raise ShapeError("Registry feature names must be unique")

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, feature_id: int) -> FeatureSpec:
        """Look up by 1-based feature id"""
        return self.entries[column(feature_id)]

    @property
    def names(self) -> List[str]:
        return [e.name for e in self.entries]

    def by_dimension(self) -> Dict[Dimension, List[FeatureSpec]]:
        groups: Dict[Dimension, List[FeatureSpec]] = {}
        for entry in self.entries:
            groups.setdefault(entry.dimension, []).append(entry)
        return groups

    def derived_columns(self) -> List[int]:
        return [column(e.id) for e in self.entries if e.derived]

    def clustering_columns(self) -> List[int]:
        """The 52 columns the mixture model sees (everything but derived ones)"""
        return [column(e.id) for e in self.entries if not e.derived]

    def to_dict(self) -> Dict[str, object]:
        return {"entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "FeatureRegistry":
        return cls(tuple(FeatureSpec.from_dict(e) for e in data["entries"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "FeatureRegistry":
        return cls.from_dict(json.loads(text))

    def fingerprint(self) -> str:
        """sha256 of the canonical JSON; embedded in datasets and checkpoints"""
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


_M, _IR, _BF, _RA, _PR, _IC, _MC = (
    Dimension.MACROECONOMY,
    Dimension.INDUSTRY_REGION,
    Dimension.BASIC_FINANCIALS,
    Dimension.REPAYMENT_ABILITY,
    Dimension.PROFITABILITY,
    Dimension.ISSUER_CHARACTERISTICS,
    Dimension.MARKET_CONDITIONS,
)
_D, _MO, _Q = Frequency.DAILY, Frequency.MONTHLY, Frequency.QUARTERLY

# (name, dimension, frequency) in index-system order. The printed table skips 44
# and repeats 46; ids are renumbered sequentially and "forecast profit change",
# introduced in the narrative, closes the list as id 53.
_INDEX_SYSTEM = (
    ("leading economic index", _M, _MO),
    ("manufacturing PMI", _M, _MO),
    ("PPI month-on-month", _M, _MO),
    ("CPI month-on-month", _M, _MO),
    ("GDP quarter-on-quarter", _M, _Q),
    ("RMB to USD exchange rate", _M, _D),
    ("3-month Shibor rate", _M, _D),
    ("treasury rate for the same period", _M, _D),
    ("stock of social financing scale", _M, _MO),
    ("ShenWan primary industry", _IR, _D),
    ("bond default probability by category", _IR, _D),
    ("default probability by region", _IR, _D),
    ("operating revenue", _BF, _Q),
    ("operating cost", _BF, _Q),
    ("total profit", _BF, _Q),
    ("current assets", _BF, _Q),
    ("non-current assets", _BF, _Q),
    ("total assets", _BF, _Q),
    ("current liabilities", _BF, _Q),
    ("non-current liabilities", _BF, _Q),
    ("total liabilities", _BF, _Q),
    ("total stockholders' equity", _BF, _Q),
    ("cash flow from operations", _BF, _Q),
    ("cash flow from investment activities", _BF, _Q),
    ("cash flow from financing activities", _BF, _Q),
    ("total cash flow", _BF, _Q),
    ("current ratio", _RA, _Q),
    ("quick ratio", _RA, _Q),
    ("superquick ratio", _RA, _Q),
    ("assets-liabilities ratio", _RA, _Q),
    ("equity ratio", _RA, _Q),
    ("bond to tangible assets ratio", _RA, _Q),
    ("gross sales margin", _RA, _Q),
    ("net profit margin on sales", _RA, _Q),
    ("return on assets", _RA, _Q),
    ("operating profit margin", _PR, _Q),
    ("return on equity", _PR, _Q),
    ("operating cycle", _PR, _Q),
    ("inventory turnover ratio", _PR, _Q),
    ("receivables turnover ratio", _PR, _Q),
    ("current asset turnover ratio", _PR, _Q),
    ("equity turnover", _PR, _Q),
    ("total asset turnover", _PR, _Q),
    ("credit residual ratio", _IC, _MO),
    ("change in credit month-on-month", _IC, _MO),
    ("guaranteed credit ratio", _IC, _MO),
    ("stock price fluctuations", _IC, _D),
    ("trading volume", _MC, _D),
    ("residual maturity", _MC, _D),
    ("yield to maturity", _MC, _D),
    ("risk spread", _MC, _D),
    ("prior default probability", _MC, _D),
    ("forecast profit change", _IC, _Q),
)


def build_default_registry() -> FeatureRegistry:
    """Canonical 53-entry registry in index-system order"""
    entries = []
    for idx, (name, dimension, frequency) in enumerate(_INDEX_SYSTEM, start=1):
        step_series = frequency is not Frequency.DAILY or idx == INDUSTRY_CODE_ID
        entries.append(
            FeatureSpec(
                id=idx,
                name=name,
                dimension=dimension,
                native_frequency=frequency,
                fill_rule=FillRule.FORWARD_FILL if step_series else FillRule.LINEAR_INTERPOLATE,
                derived=idx == PRIOR_PD_ID,
            )
        )
    return FeatureRegistry(tuple(entries))


class Outcome(str, Enum):
    MATURED = "Matured"
    DEFAULTED = "Defaulted"
    LOW_RATED_ACTIVE = "LowRatedActive"

    @property
    def high_risk(self) -> bool:
        return self is not Outcome.MATURED


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class BondRecord:
    """One bond: static attributes plus its daily feature matrix (T_i x 53)"""

    bond_id: str
    issue_date: int
    end_date: int
    outcome: Outcome
    issue_grade: int
    final_grade: int
    features: np.ndarray
    industry_id: int = 0
    region_id: int = 0
    default_date: Optional[int] = None
    # Ground-truth daily grade path, kept out of the 53 features
    latent_grades: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "outcome", Outcome(self.outcome))
        RatingGrade(self.issue_grade)
        RatingGrade(self.final_grade)
        if self.end_date < self.issue_date:
            raise DomainError(f"Bond {self.bond_id}: end_date before issue_date")
        features = _frozen_array(self.features)
        if features.ndim != 2 or features.shape != (self.n_days, N_FEATURES):
            raise ShapeError(
                f"Bond {self.bond_id}: features must be ({self.n_days}, {N_FEATURES}), got {features.shape}"
            )
        object.__setattr__(self, "features", features)

        if self.outcome is Outcome.DEFAULTED:
            if self.default_date is None or not self.issue_date < self.default_date <= self.end_date:
                raise DomainError(
                    f"Bond {self.bond_id}: defaulted bonds need issue_date < default_date <= end_date"
                )
        elif self.default_date is not None:
            raise DomainError(f"Bond {self.bond_id}: only defaulted bonds carry a default_date")

        if self.latent_grades is not None:
            latent = _frozen_array(self.latent_grades, dtype=np.int64)
            if latent.shape != (self.n_days,):
                raise ShapeError(f"Bond {self.bond_id}: latent grade path must have {self.n_days} days")
            object.__setattr__(self, "latent_grades", latent)

    @property
    def n_days(self) -> int:
        return self.end_date - self.issue_date + 1

    @property
    def high_risk(self) -> bool:
        return self.outcome.high_risk

    @property
    def days(self) -> np.ndarray:
        """Absolute trading-day index of every row"""
        return np.arange(self.issue_date, self.end_date + 1)

    def feature(self, feature_id: int) -> np.ndarray:
        return self.features[:, column(feature_id)]

    def with_features(self, features: np.ndarray) -> "BondRecord":
        """Copy of the record with a new feature matrix"""
        return BondRecord(
            bond_id=self.bond_id,
            issue_date=self.issue_date,
            end_date=self.end_date,
            outcome=self.outcome,
            issue_grade=self.issue_grade,
            final_grade=self.final_grade,
            features=features,
            industry_id=self.industry_id,
            region_id=self.region_id,
            default_date=self.default_date,
            latent_grades=self.latent_grades,
        )

    def absent_mask(self) -> np.ndarray:
        return np.isnan(self.features)


@dataclass(frozen=True, eq=False)
class LabelSeries:
    """Per-day probabilities from the three estimators and their integration"""

    bond_id: str
    start_day: int
    p_gmm: np.ndarray
    p_cs: np.ndarray
    p_bwd: np.ndarray
    p_integrated: np.ndarray

    def __post_init__(self):
        n = len(self.p_integrated)
        for name in ("p_gmm", "p_cs", "p_bwd", "p_integrated"):
            values = _frozen_array(getattr(self, name))
            if values.shape != (n,):
                raise ShapeError(f"Labels for {self.bond_id}: {name} has shape {values.shape}, expected ({n},)")
            if n and (np.any(~np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0):
                raise DomainError(f"Labels for {self.bond_id}: {name} leaves [0, 1]")
            object.__setattr__(self, name, values)

    def __len__(self) -> int:
        return len(self.p_integrated)

    @property
    def days(self) -> np.ndarray:
        return np.arange(self.start_day, self.start_day + len(self))


def index_labels(labels: Iterable[LabelSeries]) -> Dict[str, LabelSeries]:
    return {series.bond_id: series for series in labels}
