import numpy as np
import pytest

from src.errors import DomainError, NumericalError, ShapeError
from src.labeler import gmm_probability
from src.schema import grade_to_probability
import src.vbgmm as vbgmm
from src.vbgmm import ELBO_SLACK, GmmModel, component_grades, fit_vb_gmm, grade_components


def _blobs(centers, n=100, seed=0):
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.normal(c, 1.0, size=(n, len(c))) for c in centers])
    truth = np.repeat(np.arange(len(centers)), n)
    return x, truth


def _manual_model(m, grade_order):
    k, d = np.shape(m)
    return GmmModel(
        alpha=np.full(k, 10.0),
        beta=np.full(k, 10.0),
        m=np.asarray(m, dtype=np.float64),
        a=np.full(k, 10.0),
        b=np.full((k, d), 10.0),
        grade_order=np.asarray(grade_order),
    )


def test_recovers_well_separated_blobs():
    x, truth = _blobs([[-10.0, 0.0], [0.0, 10.0], [10.0, 0.0]])
    model = fit_vb_gmm(x, n_components=3, seed=1)
    predicted = model.predict_component(x)
    found = set()
    for blob in range(3):
        components = np.unique(predicted[truth == blob])
        assert len(components) == 1
        found.add(int(components[0]))
    assert len(found) == 3


def test_elbo_never_drops_beyond_rounding():
    x, _ = _blobs([[-5.0, 0.0], [5.0, 0.0], [0.0, 6.0]], n=80, seed=4)
    trace = fit_vb_gmm(x, n_components=5, seed=2, max_iter=100).elbo_trace
    for previous, current in zip(trace, trace[1:]):
        assert current >= previous - ELBO_SLACK * max(1.0, abs(previous))


@pytest.mark.parametrize("bound", [[-100.0, -90.0, -95.0], [-100.0, float("nan")]])
def test_a_broken_bound_stops_the_fit(monkeypatch, bound):
    values = iter(bound)
    monkeypatch.setattr(vbgmm, "_elbo", lambda *args: next(values))
    x, _ = _blobs([[-5.0, 0.0], [5.0, 0.0]], n=20, seed=1)
    with pytest.raises(NumericalError, match="iteration"):
        fit_vb_gmm(x, n_components=2, seed=0, max_iter=10)


def test_responsibilities_form_a_distribution():
    x, _ = _blobs([[-3.0, 0.0], [3.0, 0.0]], n=50, seed=3)
    model = fit_vb_gmm(x, n_components=4, seed=0)
    resp = model.responsibilities(x)
    assert resp.min() >= 0.0
    np.testing.assert_allclose(resp.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(model.weights.sum(), 1.0)


def test_two_far_blobs_get_confident_assignments():
    x, _ = _blobs([[-10.0, -10.0], [10.0, 10.0]], n=60, seed=5)
    resp = fit_vb_gmm(x, n_components=2, seed=0).responsibilities(x)
    assert np.all(resp.max(axis=1) >= 0.999)


def test_repeated_row_collapses_extra_components():
    x = np.tile([[0.3, -1.2]], (1000, 1))
    model = fit_vb_gmm(x, n_components=2, seed=0, max_iter=20)
    assert model.weights.min() < 1e-3


def test_fewer_rows_than_components_fails():
    with pytest.raises(DomainError):
        fit_vb_gmm(np.zeros((3, 2)), n_components=5)


def test_absent_values_are_rejected():
    x = np.ones((10, 2))
    x[3, 1] = np.nan
    with pytest.raises(DomainError):
        fit_vb_gmm(x, n_components=2)


def test_component_grades_spread_over_the_scale():
    np.testing.assert_array_equal(component_grades(22), np.arange(1, 23))
    np.testing.assert_array_equal(component_grades(3), [1, 12, 22])
    np.testing.assert_array_equal(component_grades(1), [1])


def test_widest_spread_component_gets_the_riskiest_grade():
    m = np.array([[0.0, 0.1], [0.0, 3.0], [0.0, -1.0]])
    np.testing.assert_array_equal(grade_components(m, risk_column=1), [12, 1, 22])


def test_exact_ties_go_to_the_riskier_grade():
    model = _manual_model([[0.0, 0.0], [0.0, 0.0]], grade_order=[5, 2])
    assert model.predict_grades(np.zeros((1, 2)))[0] == 2
    assert gmm_probability(model, np.zeros(2)) == pytest.approx(grade_to_probability(2))


def test_probability_at_component_means():
    model = _manual_model([[0.0, 0.0], [100.0, 100.0]], grade_order=[22, 1])
    assert gmm_probability(model, [0.0, 0.0]) == pytest.approx(0.01, abs=1e-6)
    assert gmm_probability(model, [100.0, 100.0]) == pytest.approx(0.99, abs=1e-6)


def test_grade_shares_sum_to_one():
    x, _ = _blobs([[-4.0, 0.0], [4.0, 0.0]], n=40, seed=6)
    shares = fit_vb_gmm(x, n_components=2, seed=0, risk_column=0).grade_shares(x)
    assert set(shares) == set(range(1, 23))
    assert sum(shares.values()) == pytest.approx(1.0)
    assert shares[1] == pytest.approx(0.5) and shares[22] == pytest.approx(0.5)


def test_dict_form_reproduces_predictions():
    x, _ = _blobs([[-4.0, 0.0], [4.0, 0.0]], n=30, seed=7)
    model = fit_vb_gmm(x, n_components=3, seed=0, risk_column=0)
    restored = GmmModel.from_dict(model.to_dict())
    np.testing.assert_array_equal(restored.predict_grades(x), model.predict_grades(x))
    with pytest.raises(ShapeError):
        restored.predict_grades(np.zeros((2, 3)))
