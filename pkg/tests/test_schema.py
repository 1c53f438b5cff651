import math

import numpy as np
import pytest

from src.errors import DomainError, ShapeError
from src.schema import (
    N_FEATURES,
    PRIOR_PD_ID,
    RISK_SPREAD_ID,
    Dimension,
    FeatureRegistry,
    LabelSeries,
    Outcome,
    RatingGrade,
    build_default_registry,
    column,
    grade_from_letter,
    grade_to_probability,
    grades_to_probabilities,
    rating_letter,
)


def test_registry_has_53_entries_in_seven_dimensions(registry):
    assert len(registry) == N_FEATURES
    assert [e.id for e in registry.entries] == list(range(1, 54))
    assert set(registry.by_dimension()) == set(Dimension)


def test_prior_column_is_the_only_derived_feature(registry):
    assert registry.derived_columns() == [column(PRIOR_PD_ID)]
    assert len(registry.clustering_columns()) == 52
    assert registry[RISK_SPREAD_ID].dimension is Dimension.MARKET_CONDITIONS


def test_registry_builds_identically_and_survives_json():
    first, second = build_default_registry(), build_default_registry()
    assert first.to_dict() == second.to_dict()
    assert first.fingerprint() == second.fingerprint()
    assert FeatureRegistry.from_json(first.to_json()).fingerprint() == first.fingerprint()


def test_registry_rejects_missing_entries(registry):
    with pytest.raises(ShapeError):
        FeatureRegistry(registry.entries[:-1])


@pytest.mark.parametrize(
    "grade, expected",
    [(1, 0.99), (22, 0.01), (11.5, 0.5)],
)
def test_grade_probability_anchors(grade, expected):
    assert grade_to_probability(grade) == pytest.approx(expected, abs=1e-9)


def test_grade_probability_is_strictly_decreasing_and_symmetric():
    values = [grade_to_probability(k) for k in range(1, 23)]
    assert all(a > b for a, b in zip(values, values[1:]))
    for k in range(1, 23):
        assert grade_to_probability(k) + grade_to_probability(23 - k) == pytest.approx(1.0, abs=1e-12)


def test_vectorized_grades_match_scalar():
    grades = np.arange(1, 23)
    expected = [grade_to_probability(int(k)) for k in grades]
    np.testing.assert_allclose(grades_to_probabilities(grades), expected, rtol=0, atol=1e-15)


@pytest.mark.parametrize("grade", [0, 23, -1, math.nan])
def test_out_of_range_grades_fail(grade):
    with pytest.raises(DomainError):
        grade_to_probability(grade)


def test_rating_grade_validates():
    with pytest.raises(DomainError):
        RatingGrade(0)
    with pytest.raises(DomainError):
        RatingGrade(2.5)
    assert int(RatingGrade(7)) == 7


def test_rating_letters():
    assert rating_letter(22) == "AAA+"
    assert rating_letter(21) == "AAA"
    assert rating_letter(17) == "AA-"
    assert rating_letter(1) == "D"
    assert grade_from_letter("aa-").grade == 17
    assert RatingGrade(21).letter == "AAA"
    with pytest.raises(DomainError):
        grade_from_letter("Z")


def test_bond_record_invariants(make_bond):
    bond = make_bond(n_days=5)
    assert bond.n_days == 5
    np.testing.assert_array_equal(bond.days, np.arange(5))
    assert not bond.features.flags.writeable

    with pytest.raises(DomainError):
        make_bond(outcome=Outcome.DEFAULTED, default_date=0)
    with pytest.raises(DomainError):
        make_bond(outcome=Outcome.MATURED, default_date=5)
    with pytest.raises(ShapeError):
        make_bond(n_days=5, features=np.ones((4, N_FEATURES)))
    with pytest.raises(ShapeError):
        make_bond(n_days=5, latent_grades=[10, 10])


def test_high_risk_outcomes(make_bond):
    assert make_bond(outcome=Outcome.DEFAULTED).high_risk
    assert make_bond(outcome=Outcome.LOW_RATED_ACTIVE).high_risk
    assert not make_bond(outcome=Outcome.MATURED).high_risk


def test_label_series_rejects_values_outside_unit_interval():
    ok = np.array([0.0, 0.5, 1.0])
    series = LabelSeries("B1", 4, ok, ok, ok, ok)
    np.testing.assert_array_equal(series.days, [4, 5, 6])
    with pytest.raises(DomainError):
        LabelSeries("B1", 0, ok, ok, ok, np.array([0.0, 0.5, 1.5]))
    with pytest.raises(ShapeError):
        LabelSeries("B1", 0, ok[:2], ok, ok, ok)
