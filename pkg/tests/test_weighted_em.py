import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy.optimize import minimize
from scipy.stats import poisson

from conftest import design, draw_zip
from zipimpute import load_corn_missing
from zipimpute.exceptions import DataStateError
from zipimpute.pipeline import PanelData, PipelineConfig, build_time_design, run_pipeline
from zipimpute.weighted_em import (
    CandidateSupport,
    candidate_support,
    cell_weights,
    e_step_indicator,
    fit_weighted_em,
    weighted_objective,
    weighted_update_beta,
    weighted_update_gamma,
)
from zipimpute.zip_core import ZipParams, _Rows, beta_step, fit_scoring, gamma_step, zip_logpmf


def grid_argmax(f, center, width, points=41, levels=8):
    """Zooming grid search: exhaustive on each level, then shrink around the best."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    width = np.broadcast_to(np.asarray(width, dtype=float), center.shape).copy()
    for _ in range(levels):
        axes = [np.linspace(c - w, c + w, points) for c, w in zip(center, width)]
        mesh = np.meshgrid(*axes, indexing="ij")
        cand = np.stack([m.ravel() for m in mesh], axis=1)
        vals = np.array([f(c) for c in cand])
        center = cand[np.argmax(vals)]
        width = width * 4.0 / (points - 1)
    return center


# ---------------------------------------------------------------------------
# support and weights


@pytest.mark.parametrize("observed,upper", [
    ([4, 4, 4], 10),
    ([0, 0], 1),
    ([1, 1, 1], 4),
    ([2, 6], 10),
    ([0, 1, np.nan], 3),
])
def test_candidate_support(observed, upper):
    s = candidate_support(observed)
    assert s.upper == upper
    assert_array_equal(s.values, np.arange(upper + 1))


def test_candidate_support_needs_observations():
    with pytest.raises(DataStateError):
        candidate_support([np.nan, np.nan])


def test_observed_cell_is_point_mass():
    cw = cell_weights([1.0], [1.0], ZipParams([0.0], [0.0]), CandidateSupport(5), observed=3)
    assert_array_equal(cw.w, [0, 0, 0, 1, 0, 0])


def test_missing_cell_weights_example():
    params = ZipParams(beta=[0.0], gamma=[0.0])  # pi = 0.5, lambda = 1
    cw = cell_weights([1.0], [1.0], params, CandidateSupport(4))
    raw = np.array([0.5 + 0.5 * math.exp(-1)] + [0.5 * math.exp(-1) / math.factorial(k)
                                                for k in range(1, 5)])
    assert_allclose(raw, [0.6839, 0.1839, 0.0920, 0.0307, 0.0077], atol=5e-5)
    assert_allclose(raw.sum(), 0.9982, atol=5e-5)
    assert_allclose(cw.w, raw / raw.sum(), rtol=1e-12)


def test_certain_zero_gives_point_mass_at_zero():
    params = ZipParams(beta=[1.0], gamma=[40.0])
    cw = cell_weights([1.0], [1.0], params, CandidateSupport(3))
    assert_allclose(cw.w, [1, 0, 0, 0], atol=1e-12)
    assert cw.w.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(g=st.floats(-30, 30), b=st.floats(-10, 5), K=st.integers(1, 60))
def test_weights_normalised(g, b, K):
    w = cell_weights([1.0], [1.0], ZipParams([b], [g]), CandidateSupport(K)).w
    assert np.all(w >= 0)
    assert abs(w.sum() - 1.0) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(g=st.floats(-5, 5), b=st.floats(-3, 3), db=st.floats(0.01, 1.0), K=st.integers(1, 20))
def test_zero_weight_decreases_with_lambda(g, b, db, K):
    # after renormalisation w0 is monotone while lambda^K / K! < 1, which
    # covers lambda up to the observed mean the support is built from
    lam_hi = math.exp(b + db)
    assume(K * math.log(lam_hi) < math.lgamma(K + 1))
    s = CandidateSupport(K)
    w_lo = cell_weights([1.0], [1.0], ZipParams([b], [g]), s).w[0]
    w_hi = cell_weights([1.0], [1.0], ZipParams([b + db], [g]), s).w[0]
    assert w_hi < w_lo


@settings(max_examples=50, deadline=None)
@given(g=st.floats(-5, 5), b=st.floats(-3, 3), db=st.floats(0.01, 1.0))
def test_unnormalised_zero_mass_decreases_with_lambda(g, b, db):
    pi = 1 / (1 + math.exp(-g))
    assert zip_logpmf(0.0, pi, math.exp(b + db)) < zip_logpmf(0.0, pi, math.exp(b))


def test_zero_weight_rises_when_lambda_far_beyond_support():
    # truncation: almost all Poisson mass sits above K, so zero regains weight
    s = CandidateSupport(8)
    w = [cell_weights([1.0], [1.0], ZipParams([b], [0.0]), s).w[0] for b in (1.0, 2.0)]
    assert w[1] > w[0]


def test_no_inflation_weights_are_truncated_poisson():
    lam = 2.5
    params = ZipParams(beta=[math.log(lam)], gamma=[-30.0])
    w = cell_weights([1.0], [1.0], params, CandidateSupport(6)).w
    pmf = poisson.pmf(np.arange(7), lam)
    assert_allclose(w, pmf / pmf.sum(), rtol=1e-10)


def test_e_step_indicator():
    params = ZipParams(beta=[0.0], gamma=[0.0])
    assert e_step_indicator(2, [1.0], [1.0], params) == 0.0
    assert_allclose(e_step_indicator(0, [1.0], [1.0], params), 1 / (1 + math.exp(-1)), rtol=1e-14)
    assert_allclose(e_step_indicator(0, [1.0], [1.0], ZipParams([0.0], [30.0])), 1.0, atol=1e-12)


# ---------------------------------------------------------------------------
# weighted updates


def _toy_rows(seed=0, n=12):
    rng = np.random.default_rng(seed)
    X, Z = design(rng, n, 2), design(rng, n, 2)
    y = draw_zip(rng, X, Z, np.array([0.5, 0.3]), np.array([-0.2, 0.4]))
    params = ZipParams(beta=[0.4, 0.1], gamma=[0.1, 0.2])
    rows = _Rows(X, Z, params.beta, params.gamma)
    D = np.where(y == 0, rows.r, 0.0)
    return X, Z, y, D, params, rows


def test_unit_weights_reduce_to_unweighted_steps():
    X, Z, y, D, params, rows = _toy_rows()
    w = np.ones(y.size)
    assert_array_equal(weighted_update_gamma(Z, D, params.gamma, w),
                       gamma_step(Z, rows, D, params.gamma))
    assert_array_equal(weighted_update_beta(X, y, D, params.beta, w),
                       beta_step(X, rows, y, D, params.beta))


def test_split_weights_are_additive():
    X, Z, y, D, params, _ = _toy_rows()
    w = np.ones(y.size)
    dup = np.r_[np.arange(y.size), 0]
    w_dup = np.r_[0.5, w[1:], 0.5]
    assert_allclose(weighted_update_gamma(Z[dup], D[dup], params.gamma, w_dup),
                    weighted_update_gamma(Z, D, params.gamma, w), rtol=1e-12)
    assert_allclose(weighted_update_beta(X[dup], y[dup], D[dup], params.beta, w_dup),
                    weighted_update_beta(X, y, D, params.beta, w), rtol=1e-12)


def test_all_structural_zero_candidates_leave_beta_unchanged():
    X, _, y, _, params, _ = _toy_rows()
    D = np.ones(y.size)
    # no Poisson information: the ridge retry solves a zero right-hand side
    new = weighted_update_beta(X, y, D, params.beta, np.ones(y.size))
    assert_array_equal(new, params.beta)


def _two_unit_expansion():
    """Unit 0 observed y = 1; unit 1 missing with support {0, 1}."""
    X = Z = np.ones((3, 1))
    y_rows = np.array([1.0, 0.0, 1.0])
    params = ZipParams(beta=[0.2], gamma=[-0.3])
    rows = _Rows(X, Z, params.beta, params.gamma)
    logw = zip_logpmf(np.array([0.0, 1.0]), rows.pi[1], rows.lam[1])
    w_miss = np.exp(logw - np.logaddexp.reduce(logw))
    weights = np.r_[1.0, w_miss]
    D = np.where(y_rows == 0, rows.r, 0.0)
    return X, Z, y_rows, D, weights, params


def test_gamma_update_fixed_point_matches_grid_search():
    X, Z, y_rows, D, weights, params = _two_unit_expansion()
    g = params.gamma
    for _ in range(100):
        g = weighted_update_gamma(Z, D, g, weights)
    q = lambda c: weighted_objective(X, Z, y_rows, D, weights, ZipParams(params.beta, c))[0]
    oracle = grid_argmax(q, [0.0], 5.0)
    assert_allclose(g, oracle, atol=1e-4)


def test_beta_update_fixed_point_matches_grid_search():
    X, Z, y_rows, D, weights, params = _two_unit_expansion()
    b = params.beta
    for _ in range(100):
        b = weighted_update_beta(X, y_rows, D, b, weights)
    q = lambda c: weighted_objective(X, Z, y_rows, D, weights, ZipParams(c, params.gamma))[1]
    oracle = grid_argmax(q, [0.0], 5.0)
    assert_allclose(b, oracle, atol=1e-4)


@pytest.mark.parametrize("y,K", [([0.0, 2.0, np.nan], 2), ([0.0, 2.0, np.nan], 1),
                                 ([0.0, 3.0, np.nan], 2), ([4.0, 0.0, np.nan], 1),
                                 ([0.0, 0.0, 2.0], 2)])
def test_em_fixed_point_matches_grid_search(y, K):
    y = np.array(y)
    n = y.size
    X = Z = np.ones((n, 1))
    fit = fit_weighted_em(X, Z, y, support=CandidateSupport(K))
    assert fit.result.converged
    theta = fit.result.params
    # expected complete-data objective with weights and indicators frozen at the fixed point
    obs = np.flatnonzero(~np.isnan(y))
    miss = np.flatnonzero(np.isnan(y))
    idx = np.r_[obs, np.repeat(miss, K + 1)]
    y_rows = np.r_[y[obs], np.tile(np.arange(K + 1.0), miss.size)]
    rows = _Rows(X[idx], Z[idx], theta.beta, theta.gamma)
    D = np.where(y_rows == 0, rows.r, 0.0)
    weights = np.r_[np.ones(obs.size), fit.weights.ravel()]

    def q(c):
        qg, qb = weighted_objective(X[idx], Z[idx], y_rows, D, weights, ZipParams([c[1]], [c[0]]))
        return qg + qb

    oracle = grid_argmax(q, [0.0, 0.0], 6.0)
    assert_allclose([theta.gamma[0], theta.beta[0]], oracle, atol=1e-3)


def test_fixed_point_maximises_marginal_likelihood():
    y = np.array([0.0, 2.0, np.nan])
    X = Z = np.ones((3, 1))
    K = 2
    fit = fit_weighted_em(X, Z, y, support=CandidateSupport(K))
    assert fit.result.converged

    def marginal(c):
        g, b = c
        pi, lam = 1 / (1 + math.exp(-g)), math.exp(b)
        ll = zip_logpmf(np.array([0.0, 2.0]), pi, lam).sum()
        return ll + np.logaddexp.reduce(zip_logpmf(np.arange(K + 1.0), pi, lam))

    res = minimize(lambda c: -marginal(c), [0.0, 0.0], method="Nelder-Mead",
                   options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 5000})
    assert_allclose([fit.result.params.gamma[0], fit.result.params.beta[0]], res.x, atol=1e-3)


# ---------------------------------------------------------------------------
# full Step-1 fits


def test_no_missing_reduces_to_scoring_fit():
    rng = np.random.default_rng(4)
    X, Z = design(rng, 60, 2), design(rng, 60, 2)
    y = draw_zip(rng, X, Z, np.array([0.7, 0.2]), np.array([-0.4, 0.3]))
    em = fit_weighted_em(X, Z, y)
    direct = fit_scoring(X, Z, y)
    assert_array_equal(em.result.params.theta, direct.params.theta)
    assert em.weights.shape == (0, candidate_support(y).upper + 1)


def test_final_weights_rows_normalised():
    rng = np.random.default_rng(9)
    X, Z = design(rng, 80, 2), design(rng, 80, 2)
    y = draw_zip(rng, X, Z, np.array([0.7, 0.2]), np.array([-0.4, 0.3]))
    y[rng.choice(80, 15, replace=False)] = np.nan
    fit = fit_weighted_em(X, Z, y)
    assert fit.weights.shape == (15, fit.support.upper + 1)
    assert_allclose(fit.weights.sum(axis=1), 1.0, atol=1e-12)
    assert fit.result.loglik >= fit.result.init_loglik
    assert [c.cell for c in fit.cell_weights(time=3)] == [(int(i), 3) for i in fit.missing]


def test_em_is_deterministic():
    rng = np.random.default_rng(10)
    X, Z = design(rng, 50, 2), design(rng, 50, 1)
    y = draw_zip(rng, X, Z, np.array([0.5, 0.5]), np.array([0.0]))
    y[:8] = np.nan
    a, b = fit_weighted_em(X, Z, y), fit_weighted_em(X, Z, y)
    assert_array_equal(a.result.params.theta, b.result.params.theta)
    assert_array_equal(a.weights, b.weights)


@pytest.fixture(scope="module")
def corn_week6():
    Y, treat = load_corn_missing()
    panel = PanelData.from_groups(Y, treat)
    completed = run_pipeline(panel).completed.y[:, :5]
    spec, X, Z = build_time_design(panel, 6, completed, PipelineConfig())
    return spec, X, Z, panel.y[:, 5]


def test_corn_week6_step1_signs(corn_week6):
    spec, X, Z, y = corn_week6
    assert spec.x_columns[-1] == "y_t5"
    fit = fit_weighted_em(X, Z, y, x_names=spec.x_columns, z_names=spec.z_columns)
    params = fit.result.params
    assert np.all(np.isfinite(params.theta))
    assert params.gamma[1] > 0
    # the sign of the previous-week slope follows the marginal-likelihood optimum
    miss = np.isnan(y)
    K = fit.support.upper

    def nll(beta):
        ll = zip_logpmf(y[~miss], 1 / (1 + np.exp(-(Z[~miss] @ params.gamma))),
                        np.exp(X[~miss] @ beta)).sum()
        pi_m = 1 / (1 + np.exp(-(Z[miss] @ params.gamma)))
        lam_m = np.exp(X[miss] @ beta)
        logw = zip_logpmf(np.arange(K + 1.0)[None, :], pi_m[:, None], lam_m[:, None])
        return -(ll + np.logaddexp.reduce(logw, axis=1).sum())

    res = minimize(nll, params.beta, method="Nelder-Mead",
                   options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 20000})
    assert np.sign(params.beta[3]) == np.sign(res.x[3])
    assert_allclose(params.beta, res.x, atol=5e-3)
