"""Time-ordered driver: per-time designs, prior-response covariates and the
Step 1 / Step 2 chain.

At time ``t`` the design is the base covariates plus a summary of the
completed responses of earlier times: nothing when every earlier column is
degenerate, the single surviving column itself, or the leading principal
component(s) when two or more columns survive.
"""

from dataclasses import dataclass, field

import numpy as np

from .ancova import bartlett_estimates, decide, refit_complete
from .exceptions import DataStateError, DesignError, TimeStepError, ZIPError
from .weighted_em import fit_weighted_em
from .zip_core import FitControl

PRIOR_NONE = "none"
PRIOR_RAW = "raw_previous"
PRIOR_PCA = "pca_first_component"


@dataclass
class PanelData:
    """An ``n x T`` response grid (NaN = missing) with per-cell covariates.

    ``base_x`` and ``base_z`` have shape ``(n, T, p)`` and ``(n, T, q)``;
    covariates are always fully observed.
    """

    y: np.ndarray
    base_x: np.ndarray
    base_z: np.ndarray
    x_names: list
    z_names: list
    unit_ids: list = None
    time_names: list = None
    groups: list = None  # original group codes, kept for writing files back

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.y.ndim != 2:
            raise ValueError("y must be an n x T grid")
        n, T = self.y.shape
        self.base_x = np.asarray(self.base_x, dtype=float)
        self.base_z = np.asarray(self.base_z, dtype=float)
        for name, a, names in (("base_x", self.base_x, self.x_names),
                               ("base_z", self.base_z, self.z_names)):
            if a.shape[:2] != (n, T) or a.ndim != 3:
                raise ValueError(f"{name} must have shape (n, T, p), got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} must be fully observed")
            if len(names) != a.shape[2]:
                raise ValueError(f"{name} has {a.shape[2]} columns but {len(names)} names")
        obs = self.y[~np.isnan(self.y)]
        if np.any(obs < 0) or np.any(obs != np.floor(obs)):
            raise ValueError("responses must be nonnegative integers")
        if self.unit_ids is None:
            self.unit_ids = list(range(1, n + 1))
        if self.time_names is None:
            self.time_names = [f"We{t}" for t in range(1, T + 1)]

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def T(self):
        return self.y.shape[1]

    @property
    def mask(self):
        """``R``: True where the response is observed."""
        return ~np.isnan(self.y)

    def with_y(self, y):
        return PanelData(y=y, base_x=self.base_x, base_z=self.base_z,
                         x_names=list(self.x_names), z_names=list(self.z_names),
                         unit_ids=list(self.unit_ids), time_names=list(self.time_names),
                         groups=None if self.groups is None else list(self.groups))

    def take_units(self, order):
        order = np.asarray(order)
        return PanelData(y=self.y[order], base_x=self.base_x[order],
                         base_z=self.base_z[order], x_names=list(self.x_names),
                         z_names=list(self.z_names),
                         unit_ids=[self.unit_ids[i] for i in order],
                         time_names=list(self.time_names),
                         groups=None if self.groups is None else [self.groups[i] for i in order])

    def pooled(self, cells=None):
        """Stack cells into ``(X, Z, y)`` rows in unit-major order."""
        X = self.base_x.reshape(-1, self.base_x.shape[2])
        Z = self.base_z.reshape(-1, self.base_z.shape[2])
        y = self.y.ravel()
        if cells is not None:
            cells = np.asarray(cells).ravel()
            return X[cells], Z[cells], y[cells]
        return X, Z, y

    @classmethod
    def from_groups(cls, y, groups, time_trend=False, levels=None, **kwargs):
        """Intercept + dummy-coded groups (first level is the reference),
        optionally a linear time column ``1..T``. ``Z`` copies ``X``."""
        y = np.asarray(y, dtype=float)
        n, T = y.shape
        groups = np.asarray(groups)
        levels = sorted(set(groups.tolist())) if levels is None else list(levels)
        unknown = set(groups.tolist()) - set(levels)
        if unknown:
            raise ValueError(f"unknown group codes {sorted(unknown)}")
        cols = [np.ones((n, T))]
        names = ["intercept"]
        for lev in levels[1:]:
            cols.append(np.repeat((groups == lev).astype(float)[:, None], T, axis=1))
            names.append(f"group_{lev}")
        if time_trend:
            cols.append(np.repeat(np.arange(1.0, T + 1)[None, :], n, axis=0))
            names.append("time")
        base = np.stack(cols, axis=2)
        return cls(y=y, base_x=base, base_z=base.copy(), x_names=names,
                   z_names=list(names), groups=groups.tolist(), **kwargs)


@dataclass(frozen=True)
class PipelineConfig:
    p0: float = 0.5
    n_components: int = 1
    min_nonzero: int = 2
    max_refit_cycles: int = 5
    var_tol: float = 1e-12
    corr_tol: float = 0.999
    zero_design: str = "same"  # "same": Z uses X's columns; "base": base_z + prior
    control: FitControl = field(default_factory=FitControl)

    def __post_init__(self):
        if not 0.0 < self.p0 < 1.0:
            raise ValueError("p0 must lie in (0, 1)")
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.zero_design not in ("same", "base"):
            raise ValueError("zero_design must be 'same' or 'base'")

    def to_dict(self):
        return {
            "p0": self.p0, "n_components": self.n_components,
            "min_nonzero": self.min_nonzero, "max_refit_cycles": self.max_refit_cycles,
            "var_tol": self.var_tol, "corr_tol": self.corr_tol,
            "zero_design": self.zero_design, "tol": self.control.tol,
            "max_iter": self.control.max_iter,
        }


@dataclass
class PCAResult:
    scores: np.ndarray
    loadings: np.ndarray
    center: np.ndarray
    variance_explained: np.ndarray


def pca_scores(columns, n_components=1):
    """Principal-component scores of the columns of an ``n x m`` matrix.

    Columns are centred and the sample covariance eigendecomposed; each
    eigenvector's largest-magnitude entry is made positive.
    ``variance_explained`` holds each kept component's share of total variance.
    """
    A = np.asarray(columns, dtype=float)
    if A.ndim != 2:
        raise ValueError("columns must be 2-D")
    center = A.mean(axis=0)
    C = A - center
    if A.shape[0] < 2 or np.all(C.var(axis=0) < 1e-12):
        raise DataStateError("all prior columns are constant")
    cov = np.cov(C, rowvar=False).reshape(A.shape[1], A.shape[1])
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    k = min(n_components, A.shape[1])
    vecs = vecs[:, :k]
    for j in range(k):
        if vecs[np.argmax(np.abs(vecs[:, j])), j] < 0:
            vecs[:, j] = -vecs[:, j]
    return PCAResult(scores=C @ vecs, loadings=vecs, center=center,
                     variance_explained=vals[:k] / vals.sum())


@dataclass
class TimeModelSpec:
    """How the design at one time point was assembled.

    ``prior_times`` are 0-based indices of the earlier responses feeding the
    prior covariate; ``dropped`` lists ``(column, reason)`` pairs.
    """

    time: int
    x_columns: list
    z_columns: list
    prior_covariate: str
    prior_times: list
    dropped: list
    variance_explained: list = None
    loadings: np.ndarray = None
    center: np.ndarray = None
    _x_keep: list = None
    _z_keep: list = None

    def to_dict(self):
        return {
            "time": self.time,
            "x_columns": self.x_columns,
            "z_columns": self.z_columns,
            "prior_covariate": self.prior_covariate,
            "prior_times": [t + 1 for t in self.prior_times],
            "dropped": [list(d) for d in self.dropped],
            "variance_explained": self.variance_explained,
        }

    def matrices(self, panel, completed):
        """Rebuild ``(X, Z)`` for this time from base covariates and the
        completed responses of earlier times."""
        t = self.time - 1
        prior, _ = self._prior_block(completed)
        X_full = np.column_stack([panel.base_x[:, t, :], prior])
        Zb = panel.base_z[:, t, :] if self._z_from_base else panel.base_x[:, t, :]
        Z_full = np.column_stack([Zb, prior])
        return X_full[:, self._x_keep], Z_full[:, self._z_keep]

    _z_from_base = False

    def _prior_block(self, completed):
        n = completed.shape[0]
        if self.prior_covariate == PRIOR_NONE:
            return np.zeros((n, 0)), []
        cols = completed[:, self.prior_times]
        if self.prior_covariate == PRIOR_RAW:
            return cols, [f"y_t{self.prior_times[0] + 1}"]
        scores = (cols - self.center) @ self.loadings
        return scores, [f"pc{j + 1}" for j in range(scores.shape[1])]


def _screen(block, names, var_tol, corr_tol, keep_first=False):
    """Left-to-right drop rule: constant columns (except a leading
    intercept) and columns nearly collinear with a kept column go."""
    keep, dropped = [], []
    for j in range(block.shape[1]):
        col = block[:, j]
        is_intercept = np.all(col == 1.0)
        if is_intercept and not keep:
            keep.append(j)
            continue
        if col.var() < var_tol:
            dropped.append((names[j], "constant"))
            continue
        reason = None
        for k in keep:
            other = block[:, k]
            if other.var() < var_tol:
                continue
            c = np.corrcoef(col, other)[0, 1]
            if abs(c) > corr_tol:
                reason = f"collinear with {names[k]} (|r|={abs(c):.4f})"
                break
        if reason:
            dropped.append((names[j], reason))
        else:
            keep.append(j)
    return keep, dropped


def build_time_design(panel, t, completed, config=None):
    """Assemble the design of time ``t`` (1-based).

    ``completed`` holds the completed responses of times ``1..t-1`` (extra
    columns are ignored). Returns ``(spec, X, Z)``.
    """
    config = config or PipelineConfig()
    ti = t - 1
    completed = np.asarray(completed, dtype=float)[:, :ti]
    dropped = []
    usable = []
    for s in range(ti):
        col = completed[:, s]
        name = f"y_t{s + 1}"
        if np.isnan(col).any():
            dropped.append((name, "not completed"))
        elif col.var() < config.var_tol:
            dropped.append((name, "constant"))
        elif np.count_nonzero(col) < config.min_nonzero:
            dropped.append((name, f"fewer than {config.min_nonzero} nonzero responses"))
        else:
            usable.append(s)

    spec = TimeModelSpec(time=t, x_columns=[], z_columns=[], prior_covariate=PRIOR_NONE,
                         prior_times=usable, dropped=dropped)
    if len(usable) == 1:
        spec.prior_covariate = PRIOR_RAW
    elif len(usable) >= 2:
        pca = pca_scores(completed[:, usable], config.n_components)
        spec.prior_covariate = PRIOR_PCA
        spec.loadings = pca.loadings
        spec.center = pca.center
        spec.variance_explained = pca.variance_explained.tolist()
    spec._z_from_base = config.zero_design == "base"

    prior, prior_names = spec._prior_block(completed)
    Xb = panel.base_x[:, ti, :]
    Zb = panel.base_z[:, ti, :] if spec._z_from_base else Xb
    zb_names = panel.z_names if spec._z_from_base else panel.x_names
    X_full = np.column_stack([Xb, prior])
    Z_full = np.column_stack([Zb, prior])
    x_names = list(panel.x_names) + prior_names
    z_names = list(zb_names) + prior_names
    x_keep, x_drop = _screen(X_full, x_names, config.var_tol, config.corr_tol)
    z_keep, z_drop = _screen(Z_full, z_names, config.var_tol, config.corr_tol)
    if not x_keep or not z_keep:
        raise DesignError(f"time {t}: every design column is degenerate",
                          columns=[d[0] for d in x_drop + z_drop])
    spec.dropped = dropped + [(f"X:{c}", r) for c, r in x_drop] + \
        [(f"Z:{c}", r) for c, r in z_drop]
    spec._x_keep, spec._z_keep = x_keep, z_keep
    spec.x_columns = [x_names[j] for j in x_keep]
    spec.z_columns = [z_names[j] for j in z_keep]
    return spec, X_full[:, x_keep], Z_full[:, z_keep]


@dataclass
class TraceRecord:
    unit: object
    time: int
    pi_hat: float
    lambda_hat: float
    p0: float
    imputed: int


@dataclass
class TimeFit:
    """Everything produced at one time point."""

    spec: TimeModelSpec
    step1: object  # WeightedFit
    step2: object  # FitResult whose parameters made the final decisions
    cycles: int
    stable: bool


@dataclass
class PipelineResult:
    completed: PanelData
    times: dict  # time (1-based) -> TimeFit
    trace: list
    skipped: list
    config: PipelineConfig

    @property
    def specs(self):
        return {t: tf.spec for t, tf in self.times.items()}

    def imputed_mask(self, original):
        return np.isnan(original.y) & ~np.isnan(self.completed.y)

    def success_rate(self, original, truth):
        """Share of imputed cells exactly equal to the true count."""
        truth = np.asarray(truth, dtype=float)
        m = self.imputed_mask(original)
        if not m.any():
            return np.nan
        return float(np.mean(self.completed.y[m] == truth[m]))

    def to_dict(self):
        out = {"config": self.config.to_dict(), "skipped_times": self.skipped, "times": {}}
        for t, tf in self.times.items():
            out["times"][str(t)] = {
                "design": tf.spec.to_dict(),
                "step1": tf.step1.result.to_dict(),
                "support_upper": tf.step1.support.upper,
                "step2": tf.step2.to_dict(),
                "refit_cycles": tf.cycles,
                "imputations_stable": tf.stable,
            }
        return out


def _impute_time(X, Z, miss, params, p0):
    est = bartlett_estimates(X[miss], Z[miss], params)
    return est, decide(est.pi_hat, est.lambda_hat, p0)


def _run_time(panel, t, completed, config):
    """Steps 1 and 2 at one time; returns ``(TimeFit, est, values)``."""
    y_t = panel.y[:, t - 1]
    spec, X, Z = build_time_design(panel, t, completed, config)
    step1 = fit_weighted_em(X, Z, y_t, control=config.control,
                            x_names=spec.x_columns, z_names=spec.z_columns)
    miss = step1.missing
    if miss.size == 0:
        return TimeFit(spec=spec, step1=step1, step2=step1.result, cycles=0,
                       stable=True), None, None
    est, values = _impute_time(X, Z, miss, step1.result.params, config.p0)
    step2 = step1.result
    cycles, stable = 0, False
    for cycles in range(1, config.max_refit_cycles + 1):
        y_fill = y_t.copy()
        y_fill[miss] = values
        step2 = refit_complete(X, Z, y_fill, init=step2.params, control=config.control,
                               x_names=spec.x_columns, z_names=spec.z_columns)
        est, new_values = _impute_time(X, Z, miss, step2.params, config.p0)
        stable = np.array_equal(new_values, values)
        values = new_values
        if stable:
            break
    return TimeFit(spec=spec, step1=step1, step2=step2, cycles=cycles,
                   stable=stable), est, values


def run_pipeline(panel, config=None):
    """Impute every missing response, time by time.

    Each time point runs: design -> weighted EM (Step 1) -> missing-cell
    effects and decisions -> refit on the completed slice, repeating
    refit/re-decide until the imputations stop changing (at most
    ``max_refit_cycles`` refits). The completed column feeds later times;
    the design at time ``t`` only ever sees columns ``1..t-1``.
    """
    config = config or PipelineConfig()
    completed = panel.y.copy()
    times, trace, skipped = {}, [], []
    for t in range(1, panel.T + 1):
        ti = t - 1
        if np.all(np.isnan(panel.y[:, ti])):
            skipped.append(t)
            continue
        try:
            tf, est, values = _run_time(panel, t, completed[:, :ti].copy(), config)
        except (ZIPError, ValueError, np.linalg.LinAlgError) as exc:
            raise TimeStepError(t, exc) from exc
        times[t] = tf
        if values is None:
            continue
        miss = tf.step1.missing
        completed[miss, ti] = values
        for j, i in enumerate(miss):
            trace.append(TraceRecord(unit=panel.unit_ids[i], time=t,
                                     pi_hat=float(est.pi_hat[j]),
                                     lambda_hat=float(est.lambda_hat[j]),
                                     p0=config.p0, imputed=int(values[j])))
    return PipelineResult(completed=panel.with_y(completed), times=times, trace=trace,
                          skipped=skipped, config=config)
