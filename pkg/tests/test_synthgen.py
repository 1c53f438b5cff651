import numpy as np
import pytest

from src.errors import ConfigError
from src.schema import (
    INDUSTRY_DEFAULT_RATE_ID,
    PRIOR_PD_ID,
    REGION_DEFAULT_RATE_ID,
    RISK_SPREAD_ID,
    TREASURY_RATE_ID,
    YIELD_TO_MATURITY_ID,
    Outcome,
    column,
)
from src.synthgen import (
    MarketConfig,
    compute_group_default_rates,
    distress_to_grade,
    generate_market,
    implied_spread,
)


def test_reference_mix_of_bonds():
    config = MarketConfig(n_bonds=200, default_fraction=0.10, seed=7, min_life=40, max_life=60)
    bonds = generate_market(config)
    assert len(bonds) == 200
    assert sum(b.high_risk for b in bonds) == 20
    assert len({b.bond_id for b in bonds}) == 200


def test_generation_is_a_pure_function_of_the_config():
    config = MarketConfig(n_bonds=12, default_fraction=0.25, min_life=40, max_life=50, seed=5)
    first = generate_market(config)
    second = generate_market(config, jobs=3)
    for a, b in zip(first, second):
        assert a.bond_id == b.bond_id and a.outcome is b.outcome
        assert np.array_equal(a.features, b.features, equal_nan=True)
        np.testing.assert_array_equal(a.latent_grades, b.latent_grades)


def test_record_invariants(small_market):
    for bond in small_market:
        assert bond.features.shape == (bond.n_days, 53)
        assert 40 <= bond.n_days <= 60
        assert np.all(np.isnan(bond.feature(PRIOR_PD_ID)))
        assert np.all(np.isfinite(bond.feature(YIELD_TO_MATURITY_ID)))
        assert np.all(np.isfinite(bond.feature(TREASURY_RATE_ID)))
        if bond.outcome is Outcome.DEFAULTED:
            assert bond.default_date == bond.end_date
            assert bond.latent_grades[-1] == 1
        else:
            assert bond.default_date is None


def test_every_column_keeps_an_observed_value(small_market, registry):
    derived = set(registry.derived_columns())
    for bond in small_market:
        observed = ~np.isnan(bond.features)
        for col in range(53):
            if col not in derived:
                assert observed[:, col].any()
    assert any(np.isnan(b.features[:, column(13)]).any() for b in small_market)


def test_defaulted_spreads_widen_before_default():
    config = MarketConfig(n_bonds=40, default_fraction=0.5, min_life=250, max_life=300, seed=3)
    defaulted = [b for b in generate_market(config) if b.outcome is Outcome.DEFAULTED]
    assert defaulted
    widened = [
        np.nanmean(b.feature(RISK_SPREAD_ID)[-120:]) > np.nanmean(b.feature(RISK_SPREAD_ID)[:120])
        for b in defaulted
    ]
    assert np.mean(widened) >= 0.95


def test_macro_columns_are_shared_across_bonds(small_market):
    a, b = small_market[0], small_market[1]
    start, stop = max(a.issue_date, b.issue_date), min(a.end_date, b.end_date)
    if start > stop:
        pytest.skip("sampled bonds do not overlap")
    rows_a = np.arange(start, stop + 1) - a.issue_date
    rows_b = np.arange(start, stop + 1) - b.issue_date
    for feature_id in range(1, 10):
        x, y = a.feature(feature_id)[rows_a], b.feature(feature_id)[rows_b]
        both = ~np.isnan(x) & ~np.isnan(y)
        np.testing.assert_array_equal(x[both], y[both])


def test_group_rate_for_one_default_in_ten(make_bond):
    bonds = [make_bond(bond_id=f"B{i}", n_days=100) for i in range(9)]
    bonds.append(make_bond(bond_id="B9", n_days=100, outcome=Outcome.DEFAULTED, default_date=50))
    rates = compute_group_default_rates(bonds, 1, 1, horizon=100)
    np.testing.assert_array_equal(rates.industry[0, :50], 0.0)
    np.testing.assert_allclose(rates.industry[0, 50:], 0.1)
    np.testing.assert_allclose(rates.region, rates.industry)


def test_groups_without_defaults_stay_at_zero(make_bond):
    bonds = [
        make_bond(bond_id="B0", n_days=60, industry_id=0),
        make_bond(bond_id="B1", n_days=60, industry_id=1, outcome=Outcome.DEFAULTED, default_date=30),
    ]
    rates = compute_group_default_rates(bonds, 2, 1, horizon=60)
    applied = rates.apply(bonds)
    np.testing.assert_array_equal(applied[0].feature(INDUSTRY_DEFAULT_RATE_ID), 0.0)
    assert applied[1].feature(INDUSTRY_DEFAULT_RATE_ID)[-1] == 1.0
    assert applied[0].feature(REGION_DEFAULT_RATE_ID)[-1] == 0.5


def test_rates_are_monotone_for_a_fixed_cohort(make_bond):
    bonds = [
        make_bond(bond_id=f"B{i}", n_days=80, outcome=Outcome.DEFAULTED, default_date=10 + 15 * i)
        for i in range(4)
    ] + [make_bond(bond_id=f"M{i}", n_days=80) for i in range(4)]
    rates = compute_group_default_rates(bonds, 1, 1, horizon=80).industry[0]
    assert np.all(np.diff(rates) >= 0)
    assert rates.min() >= 0 and rates.max() <= 1
    assert rates[-1] == 0.5


def test_generated_rates_lie_in_unit_interval(small_market):
    for bond in small_market:
        for feature_id in (INDUSTRY_DEFAULT_RATE_ID, REGION_DEFAULT_RATE_ID):
            values = bond.feature(feature_id)
            assert values.min() >= 0.0 and values.max() <= 1.0


def test_distress_helpers():
    np.testing.assert_array_equal(distress_to_grade(np.array([0.0, 1.0])), [22, 1])
    spread = implied_spread(np.array([0.0]), np.array([0.03]))
    assert spread[0] / (0.03 + spread[0] + 0.7) == pytest.approx(0.01)


@pytest.mark.parametrize(
    "overrides",
    [{"min_life": 10}, {"max_life": 100, "min_life": 200}, {"default_fraction": 0.0}, {"n_bonds": 0}],
)
def test_invalid_market_configs(overrides):
    with pytest.raises(ConfigError):
        MarketConfig(**overrides)
