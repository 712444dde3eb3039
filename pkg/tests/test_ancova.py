import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from conftest import design, draw_zip
from zipimpute import load_corn_missing
from zipimpute.ancova import (
    BartlettEstimates,
    bartlett_estimates,
    decide,
    impute_cells,
    refit_complete,
)
from zipimpute.exceptions import DataStateError
from zipimpute.pipeline import PanelData, run_pipeline
from zipimpute.zip_core import ZipParams, fit_scoring, loglik


def test_zero_beta_gives_unit_lambda():
    rng = np.random.default_rng(0)
    X = design(rng, 5, 3)
    est = bartlett_estimates(X, X, ZipParams(beta=np.zeros(3), gamma=[0.3, 0.1, -0.2]))
    assert_array_equal(est.lambda_hat, 1.0)


def test_zero_predictor_gives_half_pi():
    est = bartlett_estimates([[1.0, 2.0]], [[1.0, 1.0]], ZipParams([0.0, 0.0], [1.0, -1.0]))
    assert_array_equal(est.pi_hat, [0.5])


def test_effects_are_linear_in_coefficients():
    rng = np.random.default_rng(1)
    X, Z = design(rng, 6, 3), design(rng, 6, 2)
    p = ZipParams(beta=[0.2, -0.4, 0.9], gamma=[0.5, -1.0])
    p2 = ZipParams(beta=2 * p.beta, gamma=2 * p.gamma)
    a, b = bartlett_estimates(X, Z, p), bartlett_estimates(X, Z, p2)
    assert_allclose(b.alpha, 2 * a.alpha, rtol=1e-15)
    assert_allclose(b.tau, 2 * a.tau, rtol=1e-15)
    assert_allclose(a.alpha, X @ p.beta, rtol=0)
    assert_allclose(a.tau, Z @ p.gamma, rtol=0)


def _est(pi, lam):
    pi, lam = np.atleast_1d(pi), np.atleast_1d(lam)
    return BartlettEstimates(alpha=np.log(lam), tau=np.log(pi / (1 - pi)))


@pytest.mark.parametrize("pi,lam,expected", [
    (0.98, 1e-3, 0),
    (0.001, 3.21, 3),
    (0.98, 6.71, 0),
    (0.001, 6.71, 6),
    (0.4, 0.7, 0),
])
def test_decision_examples(pi, lam, expected):
    (d,) = impute_cells(_est(pi, lam), p0=0.5)
    assert d.imputed == expected
    assert isinstance(d.imputed, int)


def test_tie_goes_to_count_branch():
    assert decide(0.5, 4.2, 0.5) == 4.0
    assert decide(np.nextafter(0.5, 1.0), 4.2, 0.5) == 0.0
    assert decide(np.nextafter(0.5, 0.0), 4.2, 0.5) == 4.0


@settings(max_examples=200, deadline=None)
@given(pi=st.floats(0.0, 1.0), lam=st.floats(1e-6, 1e4), p0=st.floats(0.01, 0.99))
def test_decision_is_nonnegative_integer(pi, lam, p0):
    v = float(decide(pi, lam, p0))
    assert v >= 0 and v == int(v)
    if pi > p0 or lam < 1:
        assert v == 0
    else:
        assert v == np.floor(lam)


def test_impute_cells_rejects_bad_threshold():
    with pytest.raises(ValueError):
        impute_cells(_est(0.5, 2.0), p0=1.0)


def test_impute_cells_carries_cell_ids():
    ds = impute_cells(_est([0.9, 0.1], [3.0, 3.5]), p0=0.5, cells=[(0, 4), (7, 4)])
    assert [d.cell for d in ds] == [(0, 4), (7, 4)]
    assert [d.imputed for d in ds] == [0, 3]


def test_refit_on_original_slice_matches_direct_fit():
    rng = np.random.default_rng(2)
    X, Z = design(rng, 50, 2), design(rng, 50, 2)
    y = draw_zip(rng, X, Z, np.array([0.6, 0.3]), np.array([-0.3, 0.2]))
    init = ZipParams(beta=[0.5, 0.2], gamma=[-0.2, 0.1])
    assert_array_equal(refit_complete(X, Z, y, init).params.theta,
                       fit_scoring(X, Z, y, init=init).params.theta)


def test_refit_requires_complete_slice():
    with pytest.raises(DataStateError):
        refit_complete(np.ones((2, 1)), np.ones((2, 1)), [1.0, np.nan], ZipParams([0.0], [0.0]))


def test_refit_does_not_lower_likelihood():
    rng = np.random.default_rng(3)
    X, Z = design(rng, 30, 2), design(rng, 30, 1)
    y = draw_zip(rng, X, Z, np.array([0.8, 0.4]), np.array([0.0]))
    step1 = fit_scoring(X, Z, y).params
    y[4] = 0.0  # the imputed cell
    refit = refit_complete(X, Z, y, init=step1)
    assert refit.loglik >= loglik(X, Z, y, step1)


def test_redeciding_a_completed_slice_is_idempotent():
    Y, treat = load_corn_missing()
    panel = PanelData.from_groups(Y, treat)
    result = run_pipeline(panel)
    again = run_pipeline(result.completed)
    assert_array_equal(again.completed.y, result.completed.y)
    assert again.trace == []


def test_corn_first_unit_week5_is_zero():
    Y, treat = load_corn_missing()
    panel = PanelData.from_groups(Y, treat)
    result = run_pipeline(panel)
    (rec,) = [r for r in result.trace if r.unit == 1 and r.time == 5]
    assert rec.pi_hat > 0.5
    assert rec.lambda_hat == pytest.approx(0.0, abs=5e-3)
    assert rec.imputed == 0
    # the first group is all zero that week, so lambda -> 0 leaves the zero
    # probability unidentified: pushing it to 1 leaves the likelihood flat
    tf = result.times[5]
    X, Z = tf.spec.matrices(panel, result.completed.y[:, :4])
    y = result.completed.y[:, 4]
    p = tf.step2.params
    shift = 30.0 - p.gamma[0]  # moves only the first group's zero probability
    pushed = ZipParams(beta=p.beta, gamma=p.gamma + np.r_[shift, -shift, -shift])
    assert abs(loglik(X, Z, y, pushed) - loglik(X, Z, y, p)) < 1e-9
