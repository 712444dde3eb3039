"""Step 2 of each time point: missing-cell effects, the zero/count decision
rule and the post-imputation refit."""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .zip_core import CLAMP, fit_scoring, require_complete


@dataclass(frozen=True)
class BartlettEstimates:
    """Missing-cell effects ``alpha = X_miss beta`` and ``tau = Z_miss gamma``."""

    alpha: np.ndarray
    tau: np.ndarray

    @property
    def lambda_hat(self):
        return np.exp(np.clip(self.alpha, -CLAMP, CLAMP))

    @property
    def pi_hat(self):
        return expit(np.clip(self.tau, -CLAMP, CLAMP))


@dataclass(frozen=True)
class ImputationDecision:
    cell: tuple
    pi_hat: float
    lambda_hat: float
    p0: float
    imputed: int


def bartlett_estimates(X_miss, Z_miss, params):
    X_miss = np.atleast_2d(np.asarray(X_miss, dtype=float))
    Z_miss = np.atleast_2d(np.asarray(Z_miss, dtype=float))
    return BartlettEstimates(alpha=X_miss @ params.beta, tau=Z_miss @ params.gamma)


def decide(pi_hat, lambda_hat, p0):
    """Vectorised rule: 0 where ``pi_hat > p0``, else ``floor(lambda_hat)``."""
    pi_hat = np.asarray(pi_hat, dtype=float)
    lambda_hat = np.asarray(lambda_hat, dtype=float)
    return np.where(pi_hat > p0, 0.0, np.floor(lambda_hat))


def impute_cells(estimates, p0=0.5, cells=None):
    """Apply the decision rule to every missing cell.

    Returns a list of :class:`ImputationDecision`, one per cell, in the order
    of ``estimates``. Ties at ``pi_hat == p0`` go to the count branch.
    """
    if not 0.0 < p0 < 1.0:
        raise ValueError(f"p0 must lie in (0, 1), got {p0}")
    pi_hat = estimates.pi_hat
    lam_hat = estimates.lambda_hat
    values = decide(pi_hat, lam_hat, p0)
    if cells is None:
        cells = [(j, None) for j in range(values.size)]
    return [
        ImputationDecision(cell=tuple(c), pi_hat=float(p), lambda_hat=float(lmb),
                           p0=float(p0), imputed=int(v))
        for c, p, lmb, v in zip(cells, pi_hat, lam_hat, values)
    ]


def refit_complete(X, Z, y, init, control=None, x_names=None, z_names=None):
    """Refit on a completed slice, warm-started at the Step-1 parameters."""
    require_complete(y)
    return fit_scoring(X, Z, y, init=init, control=control, x_names=x_names,
                       z_names=z_names)
