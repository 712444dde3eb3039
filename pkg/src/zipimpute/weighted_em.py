"""Step 1 of each time point: EM over missing responses with candidate weights.

Each missing response is expanded into pseudo-rows ``k = 0..K`` that share the
cell's design row and carry weight ``P(Y = k | params)`` renormalised over the
truncated support. Observed responses keep a single row with weight one.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ._validation import check_counts, check_design, check_full_rank, check_vector
from .exceptions import DataStateError
from .zip_core import (
    FitControl,
    FitResult,
    ZipParams,
    _loglik_rows,
    _Rows,
    beta_step,
    default_init,
    finish_fit,
    fit_scoring,
    gamma_step,
    link_lambda,
    link_pi,
    run_scoring,
    zip_logpmf,
)


@dataclass(frozen=True)
class CandidateSupport:
    upper: int

    def __post_init__(self):
        if self.upper < 1:
            raise ValueError("candidate support needs upper >= 1")

    @property
    def values(self):
        return np.arange(self.upper + 1)


@dataclass(frozen=True)
class CellWeights:
    cell: tuple
    support: CandidateSupport
    w: np.ndarray


@dataclass
class WeightedFit:
    """Step-1 fit plus the final candidate weights of every missing cell."""

    result: FitResult
    support: CandidateSupport
    missing: np.ndarray  # row indices of missing cells
    weights: np.ndarray  # shape (n_missing, K + 1)

    def cell_weights(self, time=None):
        return [
            CellWeights(cell=(int(i), time), support=self.support, w=self.weights[j])
            for j, i in enumerate(self.missing)
        ]


def candidate_support(observed):
    """Upper bound ``K = max(1, ceil(m + 3 sqrt(m)))`` from the observed mean."""
    observed = np.asarray(observed, dtype=float)
    observed = observed[~np.isnan(observed)]
    if observed.size == 0:
        raise DataStateError("no observed responses to build a candidate support")
    m = float(observed.mean())
    # guard against 4 + 3*2 landing a hair above 10 in floating point
    bound = round(m + 3.0 * math.sqrt(m), 9)
    return CandidateSupport(upper=max(1, math.ceil(bound)))


def _missing_log_weights(rows, K):
    ks = np.arange(K + 1, dtype=float)
    return zip_logpmf(ks[None, :], rows.pi[:, None], rows.lam[:, None])


def _normalise(logw):
    return np.exp(logw - logsumexp(logw, axis=1, keepdims=True))


def cell_weights(x, z, params, support, observed=None, cell=(None, None)):
    """Candidate weights for one cell.

    Observed cells get a point mass at the observed value; missing cells get
    the ZIP pmf over ``0..K`` renormalised to sum to one.
    """
    K = support.upper
    if observed is not None and not np.isnan(observed):
        w = np.zeros(K + 1)
        if observed <= K:
            w[int(observed)] = 1.0
        return CellWeights(cell=cell, support=support, w=w)
    pi = link_pi(z, params.gamma)
    lam = link_lambda(x, params.beta)
    if pi >= 1.0:
        w = np.zeros(K + 1)
        w[0] = 1.0
        return CellWeights(cell=cell, support=support, w=w)
    logw = zip_logpmf(np.arange(K + 1.0), pi, lam)
    return CellWeights(cell=cell, support=support, w=_normalise(logw[None, :])[0])


def e_step_indicator(y, x, z, params):
    """Posterior probability that a response ``y`` is a structural zero."""
    if y > 0:
        return 0.0
    lam = link_lambda(x, params.beta)
    z = np.asarray(z, dtype=float)
    eta = float(np.clip(z @ params.gamma, -30.0, 30.0))
    return 1.0 / (1.0 + math.exp(-lam - eta))


def weighted_update_gamma(Z, D, gamma, weights, ridge=1e-8):
    """One weighted scoring step for the zero-part coefficients."""
    Z = check_design(Z, "Z")
    gamma = check_vector(gamma, Z.shape[1], "gamma")
    rows = _Rows(np.zeros((Z.shape[0], 0)), Z, np.zeros(0), gamma)
    return gamma_step(Z, rows, np.asarray(D, float), gamma, np.asarray(weights, float), ridge)


def weighted_update_beta(X, y, D, beta, weights, ridge=1e-8):
    """One weighted scoring step for the Poisson-part coefficients."""
    X = check_design(X, "X")
    beta = check_vector(beta, X.shape[1], "beta")
    rows = _Rows(X, np.zeros((X.shape[0], 0)), beta, np.zeros(0))
    return beta_step(X, rows, np.asarray(y, float), np.asarray(D, float), beta,
                     np.asarray(weights, float), ridge)


def fit_weighted_em(X, Z, y, init=None, control=None, support=None,
                    x_names=None, z_names=None):
    """Weighted EM for one time slice with missing responses (NaN in ``y``).

    Every outer iteration recomputes the candidate weights, the E-step
    indicators of all (pseudo-)rows, and takes one weighted scoring step for
    ``gamma`` and ``beta``. The damping objective is the observed-data
    log-likelihood with missing cells marginalised over the support.
    """
    control = control or FitControl()
    y = check_counts(y, allow_missing=True)
    X = check_design(X, "X", y.shape[0])
    Z = check_design(Z, "Z", y.shape[0])
    check_full_rank(X, "X", x_names)
    check_full_rank(Z, "Z", z_names)
    miss = np.flatnonzero(np.isnan(y))
    obs = np.flatnonzero(~np.isnan(y))
    if support is None:
        support = candidate_support(y[obs])
    K = support.upper
    if init is None:
        init = default_init(X[obs], Z[obs], y[obs])
    check_vector(init.beta, X.shape[1], "beta")
    check_vector(init.gamma, Z.shape[1], "gamma")

    if miss.size == 0:
        result = fit_scoring(X, Z, y, init=init, control=control, x_names=x_names,
                             z_names=z_names)
        return WeightedFit(result=result, support=support, missing=miss,
                           weights=np.zeros((0, K + 1)))

    y_obs = y[obs]
    X_obs, Z_obs = X[obs], Z[obs]
    X_mis, Z_mis = X[miss], Z[miss]
    n_mis = miss.size
    idx = np.concatenate([obs, np.repeat(miss, K + 1)])
    y_rows = np.concatenate([y_obs, np.tile(np.arange(K + 1, dtype=float), n_mis)])
    ones = np.ones(obs.size)

    def expand(beta, gamma):
        w = _normalise(_missing_log_weights(_Rows(X_mis, Z_mis, beta, gamma, False), K))
        return idx, y_rows, np.concatenate([ones, w.ravel()])

    def objective(beta, gamma):
        ll = float(np.sum(_loglik_rows(_Rows(X_obs, Z_obs, beta, gamma, False), y_obs)))
        logw = _missing_log_weights(_Rows(X_mis, Z_mis, beta, gamma, False), K)
        return ll + float(np.sum(logsumexp(logw, axis=1)))

    params, ll, it, conv, trace, init_ll, msg = run_scoring(
        X, Z, expand, objective, init, control
    )
    result = finish_fit(X_obs, Z_obs, y_obs, params, ll, it, conv, trace, init_ll,
                        msg, control, x_names, z_names)
    weights = _normalise(_missing_log_weights(_Rows(X_mis, Z_mis, params.beta,
                                                    params.gamma), K))
    return WeightedFit(result=result, support=support, missing=miss, weights=weights)


def weighted_objective(X, Z, y_rows, D, weights, params):
    """Expected complete-data log-likelihood with frozen ``D`` and weights:
    the zero-part and Poisson-part pieces, returned as a pair."""
    rows = _Rows(X, Z, params.beta, params.gamma)
    q_gamma = np.sum(weights * (D * rows.eta_z - np.logaddexp(0.0, rows.eta_z)))
    q_beta = np.sum(weights * (1.0 - D) * (y_rows * rows.eta_x - rows.lam))
    return float(q_gamma), float(q_beta)
