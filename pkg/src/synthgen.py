"""
Seeded synthetic bond market with 53 daily features per bond.

Macro features follow slow AR(1) paths shared by every bond. Issuer features are
per-bond AR(1) deviations around a level tied to a latent distress path; the
distress path is mean-reverting for matured bonds and ramps to 1 over the last
``stress_onset_days`` before a default. Yield to maturity is the treasury rate
plus a spread implied by the distress level, so the spread estimator tracks truth.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError
from .logger import get_logger
from .schema import (
    INDUSTRY_CODE_ID,
    INDUSTRY_DEFAULT_RATE_ID,
    N_FEATURES,
    N_GRADES,
    PRIOR_PD_ID,
    REGION_DEFAULT_RATE_ID,
    RESIDUAL_MATURITY_ID,
    RISK_SPREAD_ID,
    TREASURY_RATE_ID,
    YIELD_TO_MATURITY_ID,
    BondRecord,
    FeatureRegistry,
    Frequency,
    Outcome,
    build_default_registry,
    column,
)
from .seeding import spawn_generators

logger = get_logger("synthgen")

TRADING_DAYS_PER_YEAR = 250
TRADING_VOLUME_ID = 48
PERIOD_DAYS = {Frequency.DAILY: 1, Frequency.MONTHLY: 21, Frequency.QUARTERLY: 63}

# Share of defaulted bonds among high-risk bonds (548 defaulted of 675 high-risk)
DEFAULTED_SHARE = 548 / 675

# Columns that are never blanked out: required by the spread estimator, computed
# by group statistics, categorical, or derived later by labeling
_NEVER_ABSENT = {
    TREASURY_RATE_ID,
    YIELD_TO_MATURITY_ID,
    INDUSTRY_CODE_ID,
    INDUSTRY_DEFAULT_RATE_ID,
    REGION_DEFAULT_RATE_ID,
    PRIOR_PD_ID,
}

# Macro processes: id -> (long-run mean, daily innovation std, lower bound)
_MACRO = {
    1: (100.0, 0.15, None),
    2: (50.5, 0.08, None),
    3: (0.1, 0.02, None),
    4: (0.2, 0.02, None),
    5: (1.3, 0.04, None),
    6: (6.8, 0.01, None),
    7: (0.025, 0.0003, 0.001),
    TREASURY_RATE_ID: (0.03, 0.0003, 0.005),
    9: (300.0, 0.5, None),
}
_MACRO_PHI = 0.995

# Issuer features: id -> (level, scale, risk direction); direction +1 means the
# value rises as the issuer deteriorates
_ISSUER = {
    13: (80.0, 12.0, -1), 14: (60.0, 9.0, 1), 15: (8.0, 2.5, -1),
    16: (120.0, 15.0, -1), 17: (200.0, 20.0, 1), 18: (320.0, 30.0, -1),
    19: (90.0, 12.0, 1), 20: (110.0, 14.0, 1), 21: (200.0, 22.0, 1),
    22: (120.0, 15.0, -1), 23: (10.0, 4.0, -1), 24: (-8.0, 3.0, 1),
    25: (5.0, 4.0, -1), 26: (7.0, 5.0, -1),
    27: (1.4, 0.25, -1), 28: (1.1, 0.2, -1), 29: (0.6, 0.15, -1),
    30: (0.6, 0.08, 1), 31: (1.6, 0.3, 1), 32: (0.3, 0.08, 1),
    33: (0.25, 0.05, -1), 34: (0.08, 0.03, -1), 35: (0.04, 0.015, -1),
    36: (0.1, 0.03, -1), 37: (0.08, 0.03, -1), 38: (180.0, 30.0, 1),
    39: (4.0, 0.8, -1), 40: (6.0, 1.2, -1), 41: (1.2, 0.2, -1),
    42: (0.9, 0.15, -1), 43: (0.5, 0.08, -1),
    44: (0.45, 0.1, -1), 45: (0.01, 0.02, -1), 46: (0.2, 0.06, 1),
    47: (0.02, 0.006, 1), 53: (0.05, 0.08, -1),
}
_ISSUER_PHI = 0.98
# Distress shifts an issuer feature by this many scales at full distress
_DISTRESS_LOADING = 3.0


@dataclass(frozen=True)
class MarketConfig:
    n_bonds: int = 200
    default_fraction: float = 675 / 7361
    min_life: int = 250
    max_life: int = 450
    seed: int = 7
    stress_onset_days: int = 120
    missing_fraction: float = 0.05
    n_industries: int = 8
    n_regions: int = 6

    def __post_init__(self):
        violations = self.violations()
        if violations:
            raise ConfigError(violations)

    def violations(self) -> List[str]:
        problems = []
        if self.n_bonds < 1:
            problems.append(f"market.n_bonds must be >= 1 (got {self.n_bonds})")
        if not 0.0 < self.default_fraction < 1.0:
            problems.append(f"market.default_fraction must lie in (0, 1) (got {self.default_fraction})")
        if self.min_life < 30:
            problems.append(f"market.min_life must be >= 30 (got {self.min_life})")
        if self.max_life < self.min_life:
            problems.append(f"market.max_life must be >= min_life (got {self.max_life} < {self.min_life})")
        if self.stress_onset_days < 1:
            problems.append(f"market.stress_onset_days must be >= 1 (got {self.stress_onset_days})")
        if not 0.0 <= self.missing_fraction < 0.5:
            problems.append(f"market.missing_fraction must lie in [0, 0.5) (got {self.missing_fraction})")
        if self.n_industries < 1 or self.n_regions < 1:
            problems.append("market.n_industries and market.n_regions must be >= 1")
        return problems

    @property
    def n_high_risk(self) -> int:
        return int(round(self.n_bonds * self.default_fraction))

    @property
    def market_days(self) -> int:
        return self.max_life + self.max_life // 2

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


@dataclass(frozen=True)
class _BondPlan:
    index: int
    outcome: Outcome
    life: int
    issue_date: int
    industry_id: int
    region_id: int


@dataclass(frozen=True)
class GroupDefaultRates:
    """Cumulative default rates per trading day for every industry and region"""

    industry: np.ndarray  # (n_industries, horizon)
    region: np.ndarray  # (n_regions, horizon)

    def apply(self, bonds: Sequence[BondRecord]) -> List[BondRecord]:
        """Write the rates into feature columns 11 and 12 of every bond"""
        updated = []
        for bond in bonds:
            features = np.array(bond.features)
            days = bond.days
            features[:, column(INDUSTRY_DEFAULT_RATE_ID)] = self.industry[bond.industry_id, days]
            features[:, column(REGION_DEFAULT_RATE_ID)] = self.region[bond.region_id, days]
            updated.append(bond.with_features(features))
        return updated


def _cumulative_rates(group_ids, issue_dates, default_dates, n_groups: int, horizon: int) -> np.ndarray:
    issued = np.zeros((n_groups, horizon))
    defaulted = np.zeros((n_groups, horizon))
    for group, issue, default in zip(group_ids, issue_dates, default_dates):
        issued[group, issue] += 1
        if default is not None:
            defaulted[group, default] += 1
    issued = np.cumsum(issued, axis=1)
    defaulted = np.cumsum(defaulted, axis=1)
    rates = np.zeros_like(issued)
    np.divide(defaulted, issued, out=rates, where=issued > 0)
    return rates


def compute_group_default_rates(
    bonds: Sequence[BondRecord],
    n_industries: Optional[int] = None,
    n_regions: Optional[int] = None,
    horizon: Optional[int] = None,
) -> GroupDefaultRates:
    """
    Per-day cumulative default rates by industry and by region.

    rate(group, d) = #bonds in group defaulted on or before d
                     / #bonds in group issued on or before d
    Groups without issued bonds have rate 0.
    """
    if horizon is None:
        horizon = max((b.end_date for b in bonds), default=-1) + 1
    if n_industries is None:
        n_industries = max((b.industry_id for b in bonds), default=-1) + 1
    if n_regions is None:
        n_regions = max((b.region_id for b in bonds), default=-1) + 1

    issue_dates = [b.issue_date for b in bonds]
    default_dates = [b.default_date for b in bonds]
    return GroupDefaultRates(
        industry=_cumulative_rates(
            [b.industry_id for b in bonds], issue_dates, default_dates, max(n_industries, 1), max(horizon, 1)
        ),
        region=_cumulative_rates(
            [b.region_id for b in bonds], issue_dates, default_dates, max(n_regions, 1), max(horizon, 1)
        ),
    )


def _ar1_path(rng: np.random.Generator, n: int, mean: float, sigma: float, phi: float, start: float) -> np.ndarray:
    shocks = rng.standard_normal(n) * sigma
    path = np.empty(n)
    level = start
    for t in range(n):
        level = mean + phi * (level - mean) + shocks[t]
        path[t] = level
    return path


def _hold_at_reports(daily: np.ndarray, absolute_days: np.ndarray, period: int) -> np.ndarray:
    """Unify a low-frequency series to daily: each value holds until the next report day"""
    if period == 1:
        return daily
    is_report = absolute_days % period == 0
    is_report[0] = True
    last_report = np.maximum.accumulate(np.where(is_report, np.arange(len(daily)), 0))
    return daily[last_report]


def _macro_paths(rng: np.random.Generator, registry: FeatureRegistry, horizon: int) -> Dict[int, np.ndarray]:
    paths = {}
    days = np.arange(horizon)
    for feature_id, (mean, sigma, floor) in _MACRO.items():
        daily = _ar1_path(rng, horizon, mean, sigma, _MACRO_PHI, mean)
        if floor is not None:
            daily = np.maximum(daily, floor)
        spec = registry[feature_id]
        paths[feature_id] = _hold_at_reports(daily, days, PERIOD_DAYS[spec.native_frequency])
    return paths


def distress_to_grade(distress: np.ndarray) -> np.ndarray:
    """Latent distress in [0, 1] to a rating grade (0 -> 22, 1 -> 1)"""
    return np.clip(np.rint(N_GRADES - (N_GRADES - 1) * distress), 1, N_GRADES).astype(np.int64)


def grade_to_distress(grade: float) -> float:
    return (N_GRADES - grade) / (N_GRADES - 1)


def implied_spread(distress: np.ndarray, riskfree: np.ndarray, loss_rate: float = 0.7) -> np.ndarray:
    """Credit spread whose break-even default probability is 0.01 + 0.8 * distress^2"""
    p = 0.01 + 0.8 * np.square(distress)
    return p * (riskfree + loss_rate) / (1.0 - p)


def _distress_path(rng: np.random.Generator, plan: _BondPlan, issue_grade: int, config: MarketConfig) -> np.ndarray:
    n = plan.life
    start = grade_to_distress(issue_grade)
    noise = _ar1_path(rng, n, 0.0, 0.01, 0.97, 0.0)

    if plan.outcome is Outcome.MATURED:
        end = np.clip(start + rng.uniform(-0.05, 0.1), 0.0, grade_to_distress(15))
        base = np.linspace(start, end, n)
        return np.clip(base + noise, 0.0, 0.45)

    if plan.outcome is Outcome.LOW_RATED_ACTIVE:
        end = rng.uniform(grade_to_distress(14), grade_to_distress(8))
        base = np.linspace(start, end, n)
        return np.clip(base + noise, 0.0, 0.9)

    # Defaulted: stable early life, accelerating deterioration to 1 at default
    stress = min(config.stress_onset_days, n - 1)
    onset = n - 1 - stress
    base = np.full(n, start)
    ramp = (np.arange(n - onset) / stress) ** 2
    base[onset:] = start + (1.0 - start) * ramp
    path = np.clip(base + noise, 0.0, 0.97)
    path[-1] = 1.0
    return path


def _issue_grade(rng: np.random.Generator, outcome: Outcome) -> int:
    if outcome is Outcome.MATURED:
        return int(rng.integers(15, N_GRADES + 1))
    if outcome is Outcome.DEFAULTED:
        return int(rng.integers(12, 20))
    return int(rng.integers(11, 16))


def _generate_bond(
    plan: _BondPlan,
    rng: np.random.Generator,
    macro: Dict[int, np.ndarray],
    registry: FeatureRegistry,
    config: MarketConfig,
) -> BondRecord:
    n = plan.life
    days = np.arange(plan.issue_date, plan.issue_date + n)
    issue_grade = _issue_grade(rng, plan.outcome)
    distress = _distress_path(rng, plan, issue_grade, config)
    latent = distress_to_grade(distress)
    latent[0] = issue_grade

    features = np.zeros((n, N_FEATURES))
    for feature_id, path in macro.items():
        features[:, column(feature_id)] = path[days]
    features[:, column(INDUSTRY_CODE_ID)] = plan.industry_id

    issuer_quality = rng.normal(0.0, 0.5)
    for feature_id, (level, scale, direction) in _ISSUER.items():
        deviation = _ar1_path(rng, n, 0.0, np.sqrt(1 - _ISSUER_PHI ** 2), _ISSUER_PHI, rng.standard_normal())
        daily = level + scale * (direction * (_DISTRESS_LOADING * distress + 0.3 * issuer_quality) + 0.5 * deviation)
        spec = registry[feature_id]
        features[:, column(feature_id)] = _hold_at_reports(daily, days, PERIOD_DAYS[spec.native_frequency])

    # Market conditions
    riskfree = features[:, column(TREASURY_RATE_ID)]
    spread = implied_spread(distress, riskfree) * np.exp(rng.normal(0.0, 0.08, n))
    features[:, column(YIELD_TO_MATURITY_ID)] = riskfree + spread
    features[:, column(RISK_SPREAD_ID)] = spread
    features[:, column(TRADING_VOLUME_ID)] = np.exp(rng.normal(np.log(5e3), 0.3, n) - 1.5 * distress)
    maturity_day = plan.issue_date + n - 1
    if plan.outcome is not Outcome.MATURED:
        maturity_day += int(rng.integers(60, 500))
    features[:, column(RESIDUAL_MATURITY_ID)] = (maturity_day - days) / TRADING_DAYS_PER_YEAR

    features[:, column(PRIOR_PD_ID)] = np.nan
    if config.missing_fraction > 0:
        blankable = [column(f) for f in range(1, N_FEATURES + 1) if f not in _NEVER_ABSENT]
        mask = rng.random((n, len(blankable))) < config.missing_fraction
        # every column keeps at least one observed value
        mask[0, mask.all(axis=0)] = False
        block = features[:, blankable]
        block[mask] = np.nan
        features[:, blankable] = block

    default_date = int(days[-1]) if plan.outcome is Outcome.DEFAULTED else None
    return BondRecord(
        bond_id=f"B{plan.index:05d}",
        issue_date=int(days[0]),
        end_date=int(days[-1]),
        outcome=plan.outcome,
        issue_grade=issue_grade,
        final_grade=int(latent[-1]),
        features=features,
        industry_id=plan.industry_id,
        region_id=plan.region_id,
        default_date=default_date,
        latent_grades=latent,
    )


def _plan_market(rng: np.random.Generator, config: MarketConfig) -> List[_BondPlan]:
    n_high = config.n_high_risk
    n_defaulted = int(round(n_high * DEFAULTED_SHARE))
    if n_high and not n_defaulted:
        n_defaulted = 1
    outcomes = (
        [Outcome.DEFAULTED] * n_defaulted
        + [Outcome.LOW_RATED_ACTIVE] * (n_high - n_defaulted)
        + [Outcome.MATURED] * (config.n_bonds - n_high)
    )
    outcomes = [outcomes[i] for i in rng.permutation(config.n_bonds)]

    plans = []
    for index, outcome in enumerate(outcomes):
        life = int(rng.integers(config.min_life, config.max_life + 1))
        issue = int(rng.integers(0, config.market_days - life + 1))
        plans.append(
            _BondPlan(
                index=index,
                outcome=outcome,
                life=life,
                issue_date=issue,
                industry_id=int(rng.integers(config.n_industries)),
                region_id=int(rng.integers(config.n_regions)),
            )
        )
    return plans


def generate_market(
    config: MarketConfig,
    registry: Optional[FeatureRegistry] = None,
    jobs: int = 1,
) -> List[BondRecord]:
    """
    Generate ``config.n_bonds`` bond records.

    Pure function of ``config``: the same config always produces identical records.
    Per-bond generation is independent once the macro path is drawn, so it can
    fan out over ``jobs`` threads without changing the output.
    """
    registry = registry or build_default_registry()
    generators = spawn_generators(config.seed, config.n_bonds + 1)
    market_rng, bond_rngs = generators[0], generators[1:]

    plans = _plan_market(market_rng, config)
    macro = _macro_paths(market_rng, registry, config.market_days)

    def build(index: int) -> BondRecord:
        return _generate_bond(plans[index], bond_rngs[index], macro, registry, config)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            bonds = list(executor.map(build, range(config.n_bonds)))
    else:
        bonds = [build(i) for i in range(config.n_bonds)]

    rates = compute_group_default_rates(
        bonds, n_industries=config.n_industries, n_regions=config.n_regions, horizon=config.market_days
    )
    bonds = rates.apply(bonds)

    n_high = sum(b.high_risk for b in bonds)
    logger.info(
        f"Generated {len(bonds)} bonds ({n_high} high-risk, "
        f"{sum(b.outcome is Outcome.DEFAULTED for b in bonds)} defaulted) over {config.market_days} trading days"
    )
    return bonds

