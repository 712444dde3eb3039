"""Monte-Carlo comparison of imputation strategies on longitudinal ZIP panels.

Each replicate simulates (or takes) a complete panel, fits the pooled model
to it, deletes responses completely at random and refits under three
treatments of the gap: complete cases only, per-unit mode filling, and the
sequential pipeline.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logit
from scipy.stats import norm

from .datasets import load_corn
from .pipeline import PanelData, PipelineConfig, run_pipeline
from .zip_core import FitControl, fit_scoring, zip_ppf

MODELS = ("complete", "missing", "mode", "em")
IMPUTING_MODELS = ("mode", "em")


@dataclass(frozen=True)
class SimConfig:
    beta: tuple = (1.0, -0.5, 0.5, 0.1)
    pi_target: float = 0.5
    n_per_treatment: int = 10
    T: int = 5
    corr_type: str = "ar1"
    alpha: float = 0.5
    loss_fraction: float = 0.3
    replicates: int = 200
    seed: int = 0

    def __post_init__(self):
        if len(self.beta) != 4:
            raise ValueError("beta needs four entries (intercept, x1, x2, time)")
        if not 0.0 <= self.pi_target < 1.0:
            raise ValueError("pi_target must lie in [0, 1)")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if not 0.0 <= self.loss_fraction < 1.0:
            raise ValueError("loss_fraction must lie in [0, 1)")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.n_per_treatment < 1 or self.T < 1:
            raise ValueError("n_per_treatment and T must be positive")
        if self.corr_type not in ("ar1", "exchangeable"):
            raise ValueError("corr_type must be 'ar1' or 'exchangeable'")

    @property
    def gamma(self):
        """Zero-part intercept ``logit(pi)``; ``-inf`` when ``pi = 0``."""
        if self.pi_target == 0.0:
            return (-np.inf,)
        return (float(logit(self.pi_target)),)

    def to_dict(self):
        d = asdict(self)
        d["beta"] = list(self.beta)
        return d


def correlation_matrix(T, alpha, kind="ar1"):
    """``R(alpha)``: AR(1) ``alpha^|t-s|`` or exchangeable."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    idx = np.arange(T)
    if kind == "ar1":
        return alpha ** np.abs(idx[:, None] - idx[None, :])
    if kind == "exchangeable":
        R = np.full((T, T), float(alpha))
        np.fill_diagonal(R, 1.0)
        return R
    raise ValueError(f"unknown correlation type {kind!r}")


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sim_design(n_per_treatment, T):
    """Base covariates of the simulated panel: ``X = [1, x1, x2, t]`` and an
    intercept-only zero part."""
    groups = np.repeat([1, 2, 3], n_per_treatment)
    n = groups.size
    panel = PanelData.from_groups(np.zeros((n, T)), groups, time_trend=True)
    panel.base_z = panel.base_z[:, :, :1].copy()
    panel.z_names = ["intercept"]
    return panel


def simulate_panel(config, rng=None):
    """Draw a complete panel through a Gaussian copula with ZIP marginals.

    Returns ``(panel, truth)``; ``panel.y`` equals ``truth``.
    """
    rng = _rng(config.seed if rng is None else rng)
    panel = sim_design(config.n_per_treatment, config.T)
    R = correlation_matrix(config.T, config.alpha, config.corr_type)
    L = np.linalg.cholesky(R)
    g = rng.standard_normal((panel.n, config.T)) @ L.T
    u = norm.cdf(g)
    lam = np.exp(panel.base_x @ np.asarray(config.beta, dtype=float))
    y = zip_ppf(u, config.pi_target, lam)
    return panel.with_y(y), y


def lag1_correlation(config, panel, y):
    """Achieved correlation between consecutive times.

    Counts are standardised by their known ZIP mean and variance, so group
    and time effects do not enter. The copula targets ``alpha`` on the normal
    scale; the count-scale value is smaller and is reported, not forced.
    """
    if config.T < 2:
        return float("nan")
    pi = config.pi_target
    lam = np.exp(panel.base_x @ np.asarray(config.beta, dtype=float))
    r = (y - (1.0 - pi) * lam) / np.sqrt((1.0 - pi) * lam * (1.0 + pi * lam))
    return float(np.mean(r[:, 1:] * r[:, :-1]))


def delete_mcar(panel, loss_fraction, seed=None):
    """Blank ``floor(loss_fraction * n * T)`` responses chosen uniformly."""
    if not 0.0 <= loss_fraction < 1.0:
        raise ValueError("loss_fraction must lie in [0, 1)")
    rng = _rng(seed)
    size = panel.y.size
    k = math.floor(round(loss_fraction * size, 9))
    y = panel.y.copy()
    if k:
        cells = rng.choice(size, size=k, replace=False)
        y.ravel()[cells] = np.nan
    return panel.with_y(y)


def mode_fill(panel):
    """Fill each unit's gaps with its most frequent observed response
    (smallest value on ties). Units with nothing observed get 0.

    Returns ``(filled_panel, fallback_units)``.
    """
    y = panel.y.copy()
    fallback = []
    for i in range(y.shape[0]):
        row = y[i]
        gaps = np.isnan(row)
        if not gaps.any():
            continue
        seen = row[~gaps]
        if seen.size == 0:
            row[gaps] = 0.0
            fallback.append(panel.unit_ids[i])
            continue
        values, counts = np.unique(seen, return_counts=True)
        row[gaps] = values[np.argmax(counts)]
    return panel.with_y(y), fallback


def fit_pooled(panel, control=None):
    """Pooled ZIP fit over every observed cell of the panel."""
    X, Z, y = panel.pooled()
    keep = ~np.isnan(y)
    return fit_scoring(X[keep], Z[keep], y[keep], control=control,
                       x_names=list(panel.x_names), z_names=list(panel.z_names))


def param_names(panel):
    return [f"gamma_{c}" for c in panel.z_names] + [f"beta_{c}" for c in panel.x_names]


@dataclass
class ReplicateResult:
    replicate: int
    estimates: dict  # model -> theta (gamma, beta) or None
    mae: dict  # imputing model -> mean |imputed - truth|
    success: dict  # imputing model -> share of exact matches
    failures: dict = field(default_factory=dict)  # model -> message
    n_deleted: int = 0
    mode_fallback_units: int = 0
    achieved_correlation: float = float("nan")


def run_replicate(index, truth_panel, loss_fraction, rng, pipeline_config=None,
                  control=None, complete_fit=None):
    """One replicate on a complete panel: fit, delete, and compare."""
    truth = truth_panel.y
    estimates, mae, success, failures = {}, {}, {}, {}

    def attempt(model, fn):
        try:
            estimates[model] = fn().params.theta
        except Exception as exc:  # recorded and excluded from summaries
            estimates[model] = None
            failures[model] = f"{type(exc).__name__}: {exc}"

    if complete_fit is None:
        attempt("complete", lambda: fit_pooled(truth_panel, control))
    else:
        estimates["complete"] = complete_fit.params.theta

    damaged = delete_mcar(truth_panel, loss_fraction, rng)
    gaps = np.isnan(damaged.y)
    attempt("missing", lambda: fit_pooled(damaged, control))

    filled, fallback = mode_fill(damaged)
    attempt("mode", lambda: fit_pooled(filled, control))
    completed = {"mode": filled.y}

    try:
        result = run_pipeline(damaged, pipeline_config)
        completed["em"] = result.completed.y
        attempt("em", lambda: fit_pooled(result.completed, control))
    except Exception as exc:
        estimates["em"] = None
        failures["em"] = f"{type(exc).__name__}: {exc}"

    if gaps.any():
        for model, grid in completed.items():
            filled_cells = gaps & ~np.isnan(grid)
            if filled_cells.any():
                diff = grid[filled_cells] - truth[filled_cells]
                mae[model] = float(np.mean(np.abs(diff)))
                success[model] = float(np.mean(diff == 0))
    return ReplicateResult(replicate=index, estimates=estimates, mae=mae, success=success,
                           failures=failures, n_deleted=int(gaps.sum()),
                           mode_fallback_units=len(fallback))


@dataclass
class ComparisonReport:
    """Aggregates over replicates. Failed fits are excluded and counted."""

    names: list
    truth: np.ndarray
    replicates: list
    config: dict = field(default_factory=dict)

    @property
    def n_replicates(self):
        return len(self.replicates)

    def estimates(self, model):
        rows = [r.estimates.get(model) for r in self.replicates]
        rows = [r for r in rows if r is not None]
        if not rows:
            return np.zeros((0, len(self.names)))
        return np.vstack(rows)

    def failure_counts(self):
        return {m: sum(m in r.failures for r in self.replicates) for m in MODELS}

    def mean_estimates(self, model):
        return self.estimates(model).mean(axis=0)

    def bias(self, model):
        """Mean ``estimate - truth`` per coefficient."""
        return self.mean_estimates(model) - self.truth

    def intervals(self, model, level=0.95):
        """Percentile interval of the estimates across replicates."""
        est = self.estimates(model)
        a = 100.0 * (1.0 - level) / 2.0
        return np.percentile(est, [a, 100.0 - a], axis=0).T

    def _metric(self, attr, model):
        vals = [getattr(r, attr)[model] for r in self.replicates if model in getattr(r, attr)]
        return float(np.mean(vals)) if vals else float("nan")

    def mean_mae(self, model):
        return self._metric("mae", model)

    def mean_success(self, model):
        return self._metric("success", model)

    def to_dict(self):
        out = {
            "config": self.config,
            "replicates": self.n_replicates,
            "parameters": list(self.names),
            "truth": _floats(self.truth),
            "failures": self.failure_counts(),
            "mae": {m: _nan_none(self.mean_mae(m)) for m in IMPUTING_MODELS},
            "success_rate": {m: _nan_none(self.mean_success(m)) for m in IMPUTING_MODELS},
            "models": {},
        }
        rho = [r.achieved_correlation for r in self.replicates]
        if not np.all(np.isnan(rho)):
            out["achieved_lag1_correlation"] = float(np.mean(rho))
        for m in MODELS:
            est = self.estimates(m)
            if est.shape[0] == 0:
                out["models"][m] = None
                continue
            iv = self.intervals(m)
            out["models"][m] = {
                "mean": _floats(est.mean(axis=0)),
                "bias": _floats(est.mean(axis=0) - self.truth),
                "lower": _floats(iv[:, 0]),
                "upper": _floats(iv[:, 1]),
            }
        return out

    def coefficient_rows(self):
        """Tidy rows ``(replicate, model, coefficient, estimate)``."""
        for r in self.replicates:
            for m in MODELS:
                theta = r.estimates.get(m)
                if theta is None:
                    continue
                for name, v in zip(self.names, theta):
                    yield (r.replicate, m, name, float(v))

    def metric_rows(self):
        """Tidy rows ``(replicate, model, mae, success_rate)``."""
        for r in self.replicates:
            for m in IMPUTING_MODELS:
                if m in r.mae:
                    yield (r.replicate, m, r.mae[m], r.success[m])


def _floats(a):
    return [_nan_none(float(v)) for v in np.asarray(a, dtype=float)]


def _nan_none(v):
    return None if not np.isfinite(v) else v


def run_comparison(config, pipeline_config=None, control=None):
    """Simulate ``config.replicates`` panels and compare the four models."""
    seeds = np.random.SeedSequence(config.seed).spawn(config.replicates)
    results = []
    panel = sim_design(config.n_per_treatment, config.T)
    for k, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        truth_panel, y = simulate_panel(config, rng)
        result = run_replicate(k, truth_panel, config.loss_fraction, rng, pipeline_config,
                               control)
        result.achieved_correlation = lag1_correlation(config, truth_panel, y)
        results.append(result)
    truth = np.concatenate([config.gamma, config.beta])
    return ComparisonReport(names=param_names(panel), truth=truth, replicates=results,
                            config=config.to_dict())


def corn_panel(time_trend=True):
    """Embedded corn counts as a panel with treatment dummies (and a week
    trend) in both model parts."""
    Y, treat = load_corn()
    return PanelData.from_groups(Y, treat, time_trend=time_trend)


def bench_corn(losses=(0.2, 0.3, 0.4, 0.5), replicates=100, seed=7, time_trend=True,
               pipeline_config=None, control=None):
    """Repeated random deletion on the corn data at each loss level.

    The reference values are the full-data estimates. Returns
    ``{loss: ComparisonReport}``.
    """
    panel = corn_panel(time_trend)
    full = fit_pooled(panel, control)
    reports = {}
    streams = np.random.SeedSequence(seed).spawn(len(losses))
    for loss, stream in zip(losses, streams):
        results = [
            run_replicate(k, panel, loss, np.random.default_rng(ss), pipeline_config,
                          control, complete_fit=full)
            for k, ss in enumerate(stream.spawn(replicates))
        ]
        reports[loss] = ComparisonReport(
            names=param_names(panel), truth=full.params.theta, replicates=results,
            config={"loss_fraction": loss, "replicates": replicates, "seed": seed,
                    "time_trend": time_trend},
        )
    return reports


__all__ = [
    "SimConfig", "ComparisonReport", "ReplicateResult", "correlation_matrix",
    "simulate_panel", "lag1_correlation", "delete_mcar", "mode_fill", "fit_pooled",
    "run_replicate", "run_comparison", "bench_corn", "corn_panel", "sim_design",
]
