"""Zero-inflated Poisson likelihood, derivatives and the Fisher-scoring fitter.

Parameter blocks are always ordered ``(gamma, beta)`` in score vectors and
information matrices: ``gamma`` drives the logit link of the zero-inflation
probability, ``beta`` the log link of the Poisson mean.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.lapack import dpotrf, dpotrs
from scipy.special import expit, gammaln, logit
from scipy.stats import poisson

from ._validation import check_counts, check_design, check_full_rank, check_vector
from .exceptions import DataStateError

#: linear predictors are clipped to this range before exponentiation
CLAMP = 30.0


@dataclass(frozen=True)
class ZipParams:
    """Coefficients of the Poisson part (``beta``) and zero part (``gamma``)."""

    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).ravel()
        gamma = np.asarray(self.gamma, dtype=float).ravel()
        if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(gamma))):
            raise ValueError("ZipParams entries must be finite")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)

    @property
    def theta(self):
        """Stacked ``(gamma, beta)`` vector."""
        return np.concatenate([self.gamma, self.beta])

    def to_dict(self):
        return {"beta": self.beta.tolist(), "gamma": self.gamma.tolist()}


@dataclass(frozen=True)
class CellParams:
    pi: float
    lam: float

    def __post_init__(self):
        if not 0.0 <= self.pi <= 1.0:
            raise ValueError(f"pi must lie in [0, 1], got {self.pi}")
        if not self.lam > 0.0:
            raise ValueError(f"lambda must be positive, got {self.lam}")


@dataclass(frozen=True)
class FitControl:
    """Convergence controls shared by every scoring fit."""

    tol: float = 1e-6
    max_iter: int = 100
    max_halvings: int = 10
    separation_threshold: float = 20.0
    ridge: float = 1e-8
    # once some |coefficient| exceeds separation_threshold, stop when an
    # accepted step gains less than ll_tol * (1 + |loglik|): the fit is
    # drifting along a separating direction
    ll_tol: float = 1e-9


@dataclass
class FitResult:
    params: ZipParams
    loglik: float
    iterations: int
    converged: bool
    info: np.ndarray
    std_errors: np.ndarray
    separation_flag: bool
    init_loglik: float = np.nan
    trace: list = field(default_factory=list)
    message: str = ""
    x_names: list = None
    z_names: list = None

    @property
    def se_gamma(self):
        return self.std_errors[: self.params.gamma.size]

    @property
    def se_beta(self):
        return self.std_errors[self.params.gamma.size:]

    def to_dict(self):
        return {
            "beta": self.params.beta.tolist(),
            "gamma": self.params.gamma.tolist(),
            "se_beta": _jsonable(self.se_beta),
            "se_gamma": _jsonable(self.se_gamma),
            "x_names": self.x_names,
            "z_names": self.z_names,
            "loglik": float(self.loglik),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "separation_flag": bool(self.separation_flag),
            "message": self.message,
        }


def _jsonable(a):
    return [None if not np.isfinite(v) else float(v) for v in np.asarray(a)]


class SingularInformation(np.linalg.LinAlgError):
    pass


# ---------------------------------------------------------------------------
# links and distribution


def _clamp(eta):
    return np.minimum(np.maximum(eta, -CLAMP), CLAMP)


def link_pi(z, gamma):
    """Logistic link ``exp(z'g) / (1 + exp(z'g))`` with a clamped predictor."""
    z = np.asarray(z, dtype=float).ravel()
    gamma = np.asarray(gamma, dtype=float).ravel()
    if z.shape != gamma.shape:
        raise ValueError(f"dimension mismatch: z has {z.size} entries, gamma {gamma.size}")
    return float(expit(_clamp(z @ gamma)))


def link_lambda(x, beta):
    """Log link ``exp(x'b)`` with a clamped predictor."""
    x = np.asarray(x, dtype=float).ravel()
    beta = np.asarray(beta, dtype=float).ravel()
    if x.shape != beta.shape:
        raise ValueError(f"dimension mismatch: x has {x.size} entries, beta {beta.size}")
    return float(np.exp(_clamp(x @ beta)))


def zip_logpmf(y, pi, lam):
    """Vectorised log P(Y = y) for ZIP(pi, lam)."""
    y = np.asarray(y, dtype=float)
    pi = np.asarray(pi, dtype=float)
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore"):
        log1mpi = np.log1p(-pi)
        zero = np.logaddexp(np.log(pi), log1mpi - lam)
        pos = log1mpi + np.where(y > 0, y * np.log(lam), 0.0) - lam - gammaln(y + 1.0)
    return np.where(y == 0, zero, pos)


def zip_pmf(y, cell):
    """P(Y = y) for a single cell. ``cell`` is a :class:`CellParams`."""
    if y < 0:
        raise ValueError("y must be nonnegative")
    if cell.pi == 1.0:
        return 1.0 if y == 0 else 0.0
    return float(np.exp(zip_logpmf(y, cell.pi, cell.lam)))


def zip_cdf(y, pi, lam):
    return pi + (1.0 - pi) * poisson.cdf(y, lam)


def zip_ppf(u, pi, lam):
    """Inverse CDF: smallest integer y with F(y) >= u."""
    u = np.asarray(u, dtype=float)
    pi = np.broadcast_to(np.asarray(pi, dtype=float), u.shape)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), u.shape)
    out = np.zeros(u.shape)
    pos = u > pi
    q = (u[pos] - pi[pos]) / (1.0 - pi[pos])
    q = np.minimum(q, 1.0 - 1e-15)
    out[pos] = poisson.ppf(q, lam[pos])
    return out


# ---------------------------------------------------------------------------
# per-row quantities


class _Rows:
    """Linear predictors and derived quantities for a set of design rows."""

    __slots__ = ("eta_x", "eta_z", "inside_x", "inside_z", "lam", "pi", "r")

    def __init__(self, X, Z, beta, gamma, derivatives=True):
        raw_x = X @ beta
        raw_z = Z @ gamma
        self.eta_x = _clamp(raw_x)
        self.eta_z = _clamp(raw_z)
        self.lam = np.exp(self.eta_x)
        self.pi = expit(self.eta_z)
        if derivatives:
            # derivative of the clamp is zero outside the band
            self.inside_x = np.abs(raw_x) < CLAMP
            self.inside_z = np.abs(raw_z) < CLAMP
            # posterior probability of a structural zero given y = 0
            self.r = expit(self.eta_z + self.lam)


def _loglik_rows(rows, y):
    log1p_w = np.logaddexp(0.0, rows.eta_z)
    zero = np.logaddexp(rows.eta_z, -rows.lam) - log1p_w
    pos = -log1p_w + y * rows.eta_x - rows.lam - gammaln(y + 1.0)
    return np.where(y == 0, zero, pos)


def e_step(X, Z, y, params):
    """Vectorised E[D | y] under ``params`` (structural-zero posterior)."""
    rows = _Rows(X, Z, params.beta, params.gamma)
    return np.where(np.asarray(y) == 0, rows.r, 0.0)


def _prepare(X, Z, y, params):
    y = check_counts(y)
    X = check_design(X, "X", y.shape[0])
    Z = check_design(Z, "Z", y.shape[0])
    check_vector(params.beta, X.shape[1], "beta")
    check_vector(params.gamma, Z.shape[1], "gamma")
    return X, Z, y


def loglik(X, Z, y, params):
    """Observed-data log-likelihood of a complete slice."""
    X, Z, y = _prepare(X, Z, y, params)
    rows = _Rows(X, Z, params.beta, params.gamma)
    return float(np.sum(_loglik_rows(rows, y)))


def score(X, Z, y, params):
    """Analytic gradient ``(dl/dgamma, dl/dbeta)``.

    ``D`` here is the observed-zero indicator, which makes the indicator
    form of the likelihood identical to the mixture form.
    """
    X, Z, y = _prepare(X, Z, y, params)
    rows = _Rows(X, Z, params.beta, params.gamma)
    D = (y == 0).astype(float)
    u_gamma = (-rows.pi + D * rows.r) * rows.inside_z
    # lam * exp(-lam) / (w + exp(-lam)) == lam * (1 - r)
    u_beta = (-D * rows.lam * (1.0 - rows.r) + (1.0 - D) * (y - rows.lam)) * rows.inside_x
    return np.concatenate([Z.T @ u_gamma, X.T @ u_beta])


def fisher_info(X, Z, y, params):
    """Observed information ``[[I_gg, I_gb], [I_bg, I_bb]]``.

    Equals the negative Hessian of :func:`loglik` wherever the predictors
    are inside the clamp band.
    """
    X, Z, y = _prepare(X, Z, y, params)
    rows = _Rows(X, Z, params.beta, params.gamma)
    D = (y == 0).astype(float)
    r, s, lam = rows.r, 1.0 - rows.r, rows.lam
    mz, mx = rows.inside_z, rows.inside_x
    a_gg = (rows.pi * (1.0 - rows.pi) - D * r * s) * mz
    a_bb = ((1.0 - D) * lam + D * lam * s * (1.0 - r * lam)) * mx
    a_gb = -D * lam * r * s * mz * mx
    I_gg = Z.T @ (a_gg[:, None] * Z)
    I_bb = X.T @ (a_bb[:, None] * X)
    I_gb = Z.T @ (a_gb[:, None] * X)
    info = np.block([[I_gg, I_gb], [I_gb.T, I_bb]])
    return 0.5 * (info + info.T)


# ---------------------------------------------------------------------------
# scoring steps


def _solve_spd(A, b, ridge):
    """Solve ``A x = b`` for symmetric PSD ``A``; one ridge retry."""
    c, info = dpotrf(A, lower=1, clean=0)
    if info != 0:
        c, info = dpotrf(A + ridge * np.eye(A.shape[0]), lower=1, clean=0)
        if info != 0:
            raise SingularInformation("information matrix is singular")
    x, info = dpotrs(c, b, lower=1)
    return x


def gamma_step(Z, rows, D, gamma, weights=None, ridge=1e-8):
    """One scoring step for the zero part:
    ``gamma + (Z'MWZ)^-1 Z'MW v`` with ``M = diag(pi(1-pi))``,
    ``v = (D - pi) / (pi(1-pi))``."""
    m = rows.pi * (1.0 - rows.pi) * rows.inside_z
    u = (D - rows.pi) * rows.inside_z
    if weights is not None:
        m = m * weights
        u = u * weights
    A = Z.T @ (m[:, None] * Z)
    return gamma + _solve_spd(A, Z.T @ u, ridge)


def beta_step(X, rows, y, D, beta, weights=None, ridge=1e-8):
    """One scoring step for the Poisson part:
    ``beta + (X'MWX)^-1 X'MW v`` with ``M = diag((1-D) lam)``,
    ``v = (y - lam) / lam``."""
    one_m_d = 1.0 - D
    m = one_m_d * rows.lam * rows.inside_x
    u = one_m_d * (y - rows.lam) * rows.inside_x
    if weights is not None:
        m = m * weights
        u = u * weights
    A = X.T @ (m[:, None] * X)
    return beta + _solve_spd(A, X.T @ u, ridge)


# ---------------------------------------------------------------------------
# fitting


def default_init(X, Z, y):
    """Moment start: Poisson intercept from the mean positive count, zero
    intercept from the observed zero fraction, all slopes zero."""
    y = np.asarray(y, dtype=float)
    y = y[~np.isnan(y)]
    beta = np.zeros(X.shape[1])
    gamma = np.zeros(Z.shape[1])
    pos = y[y > 0]
    mean_pos = pos.mean() if pos.size else 0.0
    zero_frac = float(np.mean(y == 0)) if y.size else 0.5
    if X.shape[1] and np.all(X[:, 0] == 1.0):
        beta[0] = np.log(mean_pos + 0.5)
    if Z.shape[1] and np.all(Z[:, 0] == 1.0):
        gamma[0] = logit(np.clip(zero_frac, 0.01, 0.99))
    return ZipParams(beta=beta, gamma=gamma)


def _information_and_se(X, Z, y, params, ridge):
    info = fisher_info(X, Z, y, params)
    try:
        cov = np.linalg.inv(info)
        if not np.all(np.isfinite(cov)) or np.any(np.diag(cov) < 0):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        try:
            cov = np.linalg.inv(info + ridge * np.eye(info.shape[0]))
        except np.linalg.LinAlgError:
            cov = np.full(info.shape, np.nan)
    diag = np.diag(cov)
    se = np.where(diag >= 0, np.sqrt(np.abs(diag)), np.nan)
    return info, se


def run_scoring(X, Z, expand, objective, init, control):
    """Generic EM / Fisher-scoring loop.

    ``expand(beta, gamma)`` returns ``(row_index, y_rows, weights)`` describing
    the (possibly expanded) rows entering the M-step; ``objective(beta, gamma)``
    is the log-likelihood used for step damping. Returns
    ``(params, loglik, iterations, converged, trace, init_loglik, message)``.
    """
    beta, gamma = init.beta.copy(), init.gamma.copy()
    ll = objective(beta, gamma)
    init_ll = ll
    trace = [ll]
    converged = False
    message = ""
    it = 0
    last_idx = Xr = Zr = object()
    for it in range(1, control.max_iter + 1):
        idx, y_rows, w = expand(beta, gamma)
        if idx is not last_idx:
            # the row layout is fixed across iterations; index once
            Xr = X if idx is None else X[idx]
            Zr = Z if idx is None else Z[idx]
            last_idx = idx
        rows = _Rows(Xr, Zr, beta, gamma)
        D = np.where(y_rows == 0, rows.r, 0.0)
        try:
            new_gamma = gamma_step(Zr, rows, D, gamma, w, control.ridge)
            new_beta = beta_step(Xr, rows, y_rows, D, beta, w, control.ridge)
        except SingularInformation:
            message = "singular information after ridge retry"
            break
        d_gamma = new_gamma - gamma
        d_beta = new_beta - beta
        if not (np.all(np.isfinite(d_gamma)) and np.all(np.isfinite(d_beta))):
            message = "non-finite scoring step"
            break
        full = max(np.abs(d_gamma).max(initial=0.0), np.abs(d_beta).max(initial=0.0))
        step = 1.0
        accepted = False
        for _ in range(control.max_halvings + 1):
            cand_b = beta + step * d_beta
            cand_g = gamma + step * d_gamma
            cand_ll = objective(cand_b, cand_g)
            if np.isfinite(cand_ll) and cand_ll >= ll:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # no ascent possible along the scoring direction
            converged = full < control.tol
            message = "" if converged else "step halving failed"
            break
        gain = cand_ll - ll
        beta, gamma, ll = cand_b, cand_g, cand_ll
        trace.append(ll)
        if step * full < control.tol:
            converged = True
            break
        if gain <= control.ll_tol * (1.0 + abs(ll)) and (
            np.abs(beta).max(initial=0.0) > control.separation_threshold
            or np.abs(gamma).max(initial=0.0) > control.separation_threshold
        ):
            message = "log-likelihood stalled under separation"
            break
    if not converged and not message:
        message = "maximum iterations reached"
    return ZipParams(beta=beta, gamma=gamma), ll, it, converged, trace, init_ll, message


def fit_scoring(X, Z, y, init=None, control=None, x_names=None, z_names=None):
    """Fit a ZIP regression to a complete slice by EM with Fisher-scoring
    M-steps.

    Each iteration computes ``D = E[D | y]`` and takes one scoring step for
    each block; the joint step is halved (up to ``max_halvings`` times) when
    it would lower the log-likelihood.
    """
    control = control or FitControl()
    y = check_counts(y)
    X = check_design(X, "X", y.shape[0])
    Z = check_design(Z, "Z", y.shape[0])
    check_full_rank(X, "X", x_names)
    check_full_rank(Z, "Z", z_names)
    if init is None:
        init = default_init(X, Z, y)
    check_vector(init.beta, X.shape[1], "beta")
    check_vector(init.gamma, Z.shape[1], "gamma")

    def expand(beta, gamma):
        return None, y, None

    def objective(beta, gamma):
        return float(np.sum(_loglik_rows(_Rows(X, Z, beta, gamma, False), y)))

    params, ll, it, conv, trace, init_ll, msg = run_scoring(
        X, Z, expand, objective, init, control
    )
    return finish_fit(X, Z, y, params, ll, it, conv, trace, init_ll, msg, control,
                      x_names, z_names)


def finish_fit(X, Z, y, params, ll, it, conv, trace, init_ll, msg, control,
               x_names=None, z_names=None):
    info, se = _information_and_se(X, Z, y, params, control.ridge)
    sep = bool(np.any(np.abs(params.theta) > control.separation_threshold))
    return FitResult(
        params=params, loglik=ll, iterations=it, converged=conv, info=info,
        std_errors=se, separation_flag=sep, init_loglik=init_ll, trace=trace,
        message=msg, x_names=x_names, z_names=z_names,
    )


def require_complete(y):
    if np.isnan(np.asarray(y, dtype=float)).any():
        raise DataStateError("slice has missing responses")
