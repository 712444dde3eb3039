"""scikit-learn style wrappers around the ZIP fitter and the panel imputer."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_counts
from .ancova import bartlett_estimates, decide
from .pipeline import PanelData, PipelineConfig, run_pipeline
from .zip_core import CLAMP, FitControl, fit_scoring


class ZIPRegressor(RegressorMixin, BaseEstimator):
    """Zero-inflated Poisson regression.

    Parameters
    ----------
    fit_intercept : bool
        Prepend a column of ones to both design matrices.
    tol, max_iter : float, int
        Convergence controls of the scoring fit.

    Attributes
    ----------
    coef_, intercept_ : Poisson-part coefficients.
    zero_coef_, zero_intercept_ : zero-part coefficients.
    result_ : the underlying ``FitResult``.
    """

    def __init__(self, fit_intercept=True, tol=1e-6, max_iter=100):
        self.fit_intercept = fit_intercept
        self.tol = tol
        self.max_iter = max_iter

    def _designs(self, X, Z):
        X = check_array(X, dtype=float)
        Z = X if Z is None else check_array(Z, dtype=float)
        if Z.shape[0] != X.shape[0]:
            raise ValueError("X and Z have different numbers of rows")
        if self.fit_intercept:
            X = np.column_stack([np.ones(X.shape[0]), X])
            Z = np.column_stack([np.ones(Z.shape[0]), Z])
        return X, Z

    def fit(self, X, y, Z=None):
        """Fit on count responses ``y``; ``Z`` defaults to ``X``."""
        y = check_counts(np.asarray(y, dtype=float).ravel())
        self.n_features_in_ = check_array(X, dtype=float).shape[1]
        self._zero_from_x = Z is None
        Xd, Zd = self._designs(X, Z)
        control = FitControl(tol=self.tol, max_iter=self.max_iter)
        self.result_ = fit_scoring(Xd, Zd, y, control=control)
        beta, gamma = self.result_.params.beta, self.result_.params.gamma
        k = int(self.fit_intercept)
        self.intercept_ = float(beta[0]) if k else 0.0
        self.zero_intercept_ = float(gamma[0]) if k else 0.0
        self.coef_ = beta[k:].copy()
        self.zero_coef_ = gamma[k:].copy()
        return self

    def _linear(self, X, Z):
        check_is_fitted(self, "result_")
        if Z is None and not self._zero_from_x:
            raise ValueError("this model was fitted with a separate Z; pass Z")
        Xd, Zd = self._designs(X, Z)
        if Xd.shape[1] != self.result_.params.beta.size:
            raise ValueError(f"X has {Xd.shape[1] - int(self.fit_intercept)} features, "
                             f"expected {self.n_features_in_}")
        eta_x = np.clip(Xd @ self.result_.params.beta, -CLAMP, CLAMP)
        eta_z = np.clip(Zd @ self.result_.params.gamma, -CLAMP, CLAMP)
        return eta_x, eta_z

    def predict_lambda(self, X, Z=None):
        return np.exp(self._linear(X, Z)[0])

    def predict_zero_proba(self, X, Z=None):
        """Probability of a structural zero, ``pi``."""
        return 1.0 / (1.0 + np.exp(-self._linear(X, Z)[1]))

    def predict(self, X, Z=None):
        """Mean response ``(1 - pi) * lambda``."""
        eta_x, eta_z = self._linear(X, Z)
        return np.exp(eta_x) / (1.0 + np.exp(eta_z))


class ZIPImputer(TransformerMixin, BaseEstimator):
    """Sequential imputer for an ``n x T`` count panel with NaN gaps.

    ``fit`` runs the time-ordered pipeline and stores, for every time, the
    design recipe (kept columns, principal-component loadings) and the final
    coefficients. ``transform`` replays those recipes on any panel with the
    same times and group codes, so ``fit(Y).transform(Y)`` equals
    ``fit_transform(Y)``.

    Parameters
    ----------
    p0 : float
        A missing cell is imputed 0 when its zero probability exceeds ``p0``,
        otherwise the integer part of its Poisson mean.
    n_components : int
        Principal components of earlier responses used as covariates.
    min_nonzero : int
        Earlier response columns with fewer nonzero values are left out.
    time_trend : bool
        Add a linear time column to the base design.
    """

    def __init__(self, p0=0.5, n_components=1, min_nonzero=2, max_refit_cycles=5,
                 time_trend=False, tol=1e-6, max_iter=100):
        self.p0 = p0
        self.n_components = n_components
        self.min_nonzero = min_nonzero
        self.max_refit_cycles = max_refit_cycles
        self.time_trend = time_trend
        self.tol = tol
        self.max_iter = max_iter

    def _panel(self, Y, groups, levels=None):
        Y = check_array(Y, dtype=float, ensure_all_finite="allow-nan")
        groups = np.zeros(Y.shape[0], dtype=int) if groups is None else np.asarray(groups)
        if groups.shape != (Y.shape[0],):
            raise ValueError("groups must have one entry per row of Y")
        return PanelData.from_groups(Y, groups, time_trend=self.time_trend, levels=levels)

    def _config(self):
        return PipelineConfig(p0=self.p0, n_components=self.n_components,
                              min_nonzero=self.min_nonzero,
                              max_refit_cycles=self.max_refit_cycles,
                              control=FitControl(tol=self.tol, max_iter=self.max_iter))

    def fit(self, Y, y=None, groups=None):
        panel = self._panel(Y, groups)
        self.levels_ = sorted(set(panel.groups))
        self.n_features_in_ = panel.T
        self.result_ = run_pipeline(panel, self._config())
        self.specs_ = self.result_.specs
        self.params_ = {t: tf.step2.params for t, tf in self.result_.times.items()}
        return self

    def transform(self, Y, groups=None):
        """Fill the NaN cells of ``Y`` using the fitted per-time models."""
        check_is_fitted(self, "result_")
        panel = self._panel(Y, groups, levels=self.levels_)
        if panel.T != self.n_features_in_:
            raise ValueError(f"Y has {panel.T} times, expected {self.n_features_in_}")
        completed = panel.y.copy()
        for t in range(1, panel.T + 1):
            miss = np.flatnonzero(np.isnan(completed[:, t - 1]))
            if t not in self.specs_ or miss.size == 0:
                continue
            X, Z = self.specs_[t].matrices(panel, completed[:, :t - 1])
            est = bartlett_estimates(X[miss], Z[miss], self.params_[t])
            completed[miss, t - 1] = decide(est.pi_hat, est.lambda_hat, self.p0)
        return completed

    def fit_transform(self, Y, y=None, groups=None):
        return self.fit(Y, groups=groups).result_.completed.y.copy()
