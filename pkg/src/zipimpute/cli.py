"""Command-line interface: ``fit``, ``impute``, ``simulate`` and ``bench-corn``."""

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np
from scipy.stats import norm

from . import io as zio
from .exceptions import ZIPError
from .pipeline import PipelineConfig, run_pipeline
from .simulation import SimConfig, bench_corn, corn_panel, fit_pooled, run_comparison
from .zip_core import FitControl

# options that are not run settings and never enter a resolved config
_META = {"command", "config", "func"}


def _add_control(p):
    p.add_argument("--tol", type=float, default=1e-6, help="parameter-change tolerance")
    p.add_argument("--max-iter", type=int, default=100, help="maximum scoring iterations")


def _add_pipeline(p):
    p.add_argument("--p0", type=float, default=0.5,
                   help="impute 0 when the zero probability exceeds this")
    p.add_argument("--n-components", type=int, default=1,
                   help="principal components of earlier responses")
    p.add_argument("--min-nonzero", type=int, default=2,
                   help="earlier columns with fewer nonzero counts are left out")
    p.add_argument("--max-refit-cycles", type=int, default=5)


def _add_config(p):
    p.add_argument("--config", help="JSON file of option values (e.g. a resolved config)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="zipimpute",
        description="Zero-inflated Poisson fits and sequential imputation of panel counts.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("fit", help="fit a pooled ZIP model to a complete panel file")
    p.add_argument("input", nargs="?", help="panel CSV (default: embedded corn data)")
    p.add_argument("--format", choices=["wide", "long"], default="wide")
    p.add_argument("--time-trend", action=argparse.BooleanOptionalAction, default=True,
                   help="add a linear time column to both model parts")
    p.add_argument("--json", dest="json_out", help="also write the fit as JSON here")
    _add_control(p)
    _add_config(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("impute", help="impute the missing cells of a panel file")
    p.add_argument("input", nargs="?", help="panel CSV with blank cells")
    p.add_argument("--out-dir", required=False, help="directory for outputs")
    p.add_argument("--format", choices=["wide", "long"], default="wide")
    p.add_argument("--time-trend", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--truth", help="complete panel to score the imputations against")
    _add_pipeline(p)
    _add_control(p)
    _add_config(p)
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("simulate", help="Monte-Carlo comparison of imputation strategies")
    p.add_argument("--out-dir", help="directory for outputs")
    p.add_argument("--beta", type=float, nargs=4, default=[1.0, -0.5, 0.5, 0.1],
                   metavar=("B0", "B1", "B2", "B3"))
    p.add_argument("--pi", type=float, default=0.5, help="zero-inflation probability")
    p.add_argument("--n", type=int, default=10, help="units per treatment")
    p.add_argument("--T", type=int, default=5, help="time points")
    p.add_argument("--corr", choices=["ar1", "exchangeable"], default="ar1")
    p.add_argument("--alpha", type=float, default=0.5, help="correlation parameter")
    p.add_argument("--loss", type=float, default=0.3, help="fraction of cells deleted")
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    _add_pipeline(p)
    _add_control(p)
    _add_config(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench-corn", help="repeated random deletion on the corn data")
    p.add_argument("--loss", type=float, nargs="+", default=[0.2, 0.3, 0.4, 0.5])
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--time-trend", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out-dir", help="directory for outputs")
    _add_pipeline(p)
    _add_control(p)
    _add_config(p)
    p.set_defaults(func=cmd_bench_corn)
    return parser


def _parse(parser, argv):
    """Parse ``argv``; values from ``--config`` act as defaults that explicit
    flags override. Unknown config keys are a usage error."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        settings = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        sub.error(f"cannot read config {args.config}: {exc}")
    if not isinstance(settings, dict):
        sub.error("config must be a JSON object")
    known = {a.dest for a in sub._actions} - _META - {"help"}
    unknown = sorted(set(settings) - known)
    if unknown:
        sub.error(f"unknown config keys: {', '.join(unknown)}")
    sub.set_defaults(**settings)
    return parser.parse_args(argv)


def _resolved(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in _META}


def _control(args):
    return FitControl(tol=args.tol, max_iter=args.max_iter)


def _pipeline_config(args):
    return PipelineConfig(p0=args.p0, n_components=args.n_components,
                          min_nonzero=args.min_nonzero,
                          max_refit_cycles=args.max_refit_cycles, control=_control(args))


def _out_dir(args):
    if not args.out_dir:
        return None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    zio.write_json(_resolved(args), out / "config.json")
    return out


def coefficient_table(result):
    """Rows ``(part, name, estimate, se, z, p)`` with normal-approximation p-values."""
    rows = []
    parts = (("count", result.x_names, result.params.beta, result.se_beta),
             ("zero", result.z_names, result.params.gamma, result.se_gamma))
    for part, names, est, se in parts:
        names = names or [f"x{j}" for j in range(len(est))]
        for name, b, s in zip(names, est, se):
            z = b / s if s > 0 else math.nan
            p = 2.0 * norm.sf(abs(z)) if math.isfinite(z) else math.nan
            rows.append((part, name, float(b), float(s), float(z), float(p)))
    return rows


def format_table(result):
    lines = []
    titles = {"count": "Count model coefficients (poisson with log link):",
              "zero": "Zero-inflation model coefficients (binomial with logit link):"}
    rows = coefficient_table(result)
    for part in ("count", "zero"):
        lines.append(titles[part])
        lines.append(f"{'':<14}{'Estimate':>12}{'Std. Error':>12}{'z value':>10}{'Pr(>|z|)':>11}")
        for prt, name, b, s, z, p in rows:
            if prt == part:
                lines.append(f"{name:<14}{b:>12.4f}{s:>12.4g}{z:>10.3f}{p:>11.4g}")
        lines.append("")
    lines.append(f"log-likelihood: {result.loglik:.4f}  iterations: {result.iterations}"
                 f"  converged: {result.converged}")
    if result.separation_flag:
        lines.append("warning: coefficients beyond the separation threshold; "
                     "zero-part estimates are not reliable")
    return "\n".join(lines)


def _load(args):
    if args.input:
        return zio.read_panel(args.input, format=args.format, time_trend=args.time_trend)
    return corn_panel(time_trend=args.time_trend)


def cmd_fit(args):
    panel = _load(args)
    if np.isnan(panel.y).any():
        raise ZIPError("fit needs a complete panel; run 'impute' first")
    result = fit_pooled(panel, _control(args))
    print(format_table(result))
    if args.json_out:
        zio.write_json(result.to_dict(), args.json_out)
    return 0


def cmd_impute(args):
    if not args.input:
        raise ZIPError("impute needs an input file")
    panel = zio.read_panel(args.input, format=args.format, time_trend=args.time_trend)
    out = _out_dir(args)
    result = run_pipeline(panel, _pipeline_config(args))
    report = result.to_dict()
    n_imp = len(result.trace)
    print(f"imputed {n_imp} cells over {len(result.times)} time points")
    if result.skipped:
        print(f"skipped times with no observed response: {result.skipped}")
    if args.truth:
        truth = zio.read_panel(args.truth, format=args.format, time_trend=args.time_trend)
        if truth.y.shape != panel.y.shape:
            raise ZIPError("truth panel has a different shape")
        rate = result.success_rate(panel, truth.y)
        report["success_rate"] = rate
        print(f"success rate: {rate:.4f}")
    if out is not None:
        zio.write_panel(result.completed, out / "completed.csv", format=args.format)
        zio.write_trace(result, out / "trace.csv")
        zio.write_weights(result, panel, out / "weights.csv")
        zio.write_json(report, out / "report.json")
        print(f"wrote {out}")
    else:
        sys.stdout.write(zio.panel_to_text(result.completed, format=args.format))
    return 0


def cmd_simulate(args):
    cfg = SimConfig(beta=tuple(args.beta), pi_target=args.pi, n_per_treatment=args.n, T=args.T,
                    corr_type=args.corr, alpha=args.alpha, loss_fraction=args.loss,
                    replicates=args.replicates, seed=args.seed)
    out = _out_dir(args)
    report = run_comparison(cfg, _pipeline_config(args), _control(args))
    print(f"replicates: {report.n_replicates}  failures: {report.failure_counts()}")
    print(f"mean MAE  em: {report.mean_mae('em'):.4f}  mode: {report.mean_mae('mode'):.4f}")
    print(f"success   em: {report.mean_success('em'):.4f}  mode: {report.mean_success('mode'):.4f}")
    print(_bias_table(report))
    if out is not None:
        zio.write_rows(out / "coefficients.csv", ["replicate", "model", "coefficient", "estimate"],
                       report.coefficient_rows())
        zio.write_rows(out / "metrics.csv", ["replicate", "model", "mae", "success_rate"],
                       report.metric_rows())
        zio.write_rows(out / "summary.csv", ["pi", "alpha", "n", "model", "metric", "value"],
                       _summary_rows(cfg, report))
        zio.write_json(report.to_dict(), out / "report.json")
        print(f"wrote {out}")
    return 0


def _summary_rows(cfg, report):
    for m in ("mode", "em"):
        yield (cfg.pi_target, cfg.alpha, cfg.n_per_treatment, m, "mae", report.mean_mae(m))
    for m in ("complete", "missing", "mode", "em"):
        if report.estimates(m).shape[0]:
            for name, b in zip(report.names, report.bias(m)):
                yield (cfg.pi_target, cfg.alpha, cfg.n_per_treatment, m, f"bias_{name}",
                       float(b))


def _bias_table(report):
    lines = [f"{'bias':<22}" + "".join(f"{m:>11}" for m in ("complete", "missing", "mode", "em"))]
    biases = {m: report.bias(m) if report.estimates(m).shape[0] else None
              for m in ("complete", "missing", "mode", "em")}
    for j, name in enumerate(report.names):
        cells = "".join(f"{'nan' if biases[m] is None else f'{biases[m][j]:.4f}':>11}"
                        for m in biases)
        lines.append(f"{name:<22}{cells}")
    return "\n".join(lines)


def cmd_bench_corn(args):
    for loss in args.loss:
        if not 0.0 <= loss < 1.0:
            raise ZIPError(f"loss fractions must lie in [0, 1), got {loss}")
    out = _out_dir(args)
    reports = bench_corn(losses=tuple(args.loss), replicates=args.replicates, seed=args.seed,
                         time_trend=args.time_trend, pipeline_config=_pipeline_config(args),
                         control=_control(args))
    print("Algorithm success (mean share of imputed cells equal to the original)")
    print(f"{'loss':>6}{'success %':>11}{'mode %':>9}{'failures':>10}")
    success_rows = []
    for loss, rep in reports.items():
        s = 100.0 * rep.mean_success("em")
        s_mode = 100.0 * rep.mean_success("mode")
        fails = rep.failure_counts()["em"]
        print(f"{100 * loss:>5.0f}%{s:>11.2f}{s_mode:>9.2f}{fails:>10d}")
        success_rows.append((loss, s, s_mode, rep.n_replicates, fails))
    print()
    print("Mean estimates and 95% percentile intervals after imputation (count part)")
    interval_rows = []
    for loss, rep in reports.items():
        mean = rep.mean_estimates("em")
        iv = rep.intervals("em")
        print(f"loss {100 * loss:.0f}%")
        for j, name in enumerate(rep.names):
            interval_rows.append((loss, name, float(mean[j]), float(iv[j, 0]), float(iv[j, 1]),
                                  float(rep.truth[j])))
            if name.startswith("beta_"):
                print(f"  {name[5:]:<12}{mean[j]:>9.4f}  ({iv[j, 0]:.4f}, {iv[j, 1]:.4f})")
    first = next(iter(reports.values()))
    print("full data")
    for j, name in enumerate(first.names):
        if name.startswith("beta_"):
            print(f"  {name[5:]:<12}{first.truth[j]:>9.4f}")
    if out is not None:
        zio.write_rows(out / "success.csv",
                       ["loss", "success_pct", "mode_success_pct", "replicates", "em_failures"],
                       success_rows)
        zio.write_rows(out / "intervals.csv",
                       ["loss", "coefficient", "mean", "lower", "upper", "full_data"],
                       interval_rows)
        zio.write_json({str(k): v.to_dict() for k, v in reports.items()}, out / "report.json")
        print(f"wrote {out}")
    return 0


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = _parse(parser, argv)
    try:
        return args.func(args)
    except (ZIPError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"zipimpute {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
