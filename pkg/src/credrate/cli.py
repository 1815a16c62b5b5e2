"""Command-line surface: fit, predict, evaluate, simulate, subset-select, bin.

Exit codes: 0 success, 1 usage error, 2 data validation, 3 numerical
failure or non-convergence.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import io
from .credibility import CredibilityFit, fit_jewell, predict_jewell
from .errors import CredrateError, DataValidationError, NumericalError
from .glmc import GlmcFit, fit_glmc, predict_glmc_portfolio
from .metrics import balance_alpha, evaluate_predictions, rebalance_intercept
from .portfolio import FamilySpec, Portfolio
from .selection import best_subset, cluster_grid_search
from .simulate import ExposureLaw, SimulationSpec, simulate_portfolio

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on bad flags, not argparse's 2
        raise _UsageError(message)


def _split_csv(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())


def _train_split(portfolio: Portfolio, holdout_period):
    if holdout_period is None:
        return portfolio
    kept = [obs.period < holdout_period for obs in portfolio.observations]
    if not any(kept):
        raise DataValidationError(
            f"no observations before holdout period {holdout_period}"
        )
    return portfolio.subset(kept)


def _test_split(portfolio: Portfolio, holdout_period):
    if holdout_period is None:
        return portfolio
    kept = [obs.period >= holdout_period for obs in portfolio.observations]
    if not any(kept):
        raise DataValidationError(
            f"no observations at or after holdout period {holdout_period}"
        )
    return portfolio.subset(kept)


def _predict_all(model, portfolio: Portfolio) -> np.ndarray:
    if isinstance(model, CredibilityFit):
        return np.array([
            predict_jewell(model, obs.industry_id, obs.branch_id)
            for obs in portfolio.observations
        ])
    return predict_glmc_portfolio(model, portfolio)


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_fit(args) -> int:
    config = io.parse_config(args.config) if args.config else {}
    family_name = args.family or config.get("family")
    power = args.power or config.get("power")
    estimator = args.estimator or config.get("estimator", "glmc")
    covariates = _split_csv(args.covariates if args.covariates is not None
                            else config.get("covariates", ""))

    if estimator == "jewell":
        # distribution-free; no family or covariates involved
        if covariates:
            raise _UsageError("the jewell estimator takes no covariates")
        family = None
    elif estimator == "glmc":
        if family_name is None:
            raise _UsageError("missing --family (or family key in --config)")
        family = io.family_from_config(family_name, power)
    else:
        raise _UsageError(f"unknown estimator {estimator!r}")

    portfolio = io.load_portfolio(args.portfolio)
    portfolio = _train_split(portfolio, args.holdout_period)

    if estimator == "jewell":
        fit = fit_jewell(portfolio)
        converged = True
    else:
        fit = fit_glmc(portfolio, covariates, family)
        converged = fit.converged

    io.save_model(args.out, fit)
    print(f"wrote model to {args.out}")
    if not converged:
        print("fit did not converge", file=sys.stderr)
        if not args.allow_unconverged:
            return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_predict(args) -> int:
    model = io.load_model(args.model)
    portfolio = io.load_portfolio(args.portfolio)
    if args.rebalance:
        if isinstance(model, CredibilityFit):
            raise DataValidationError(
                "rebalancing applies to log-link fits; the hierarchical "
                "credibility model is already balanced"
            )
        reference = io.load_portfolio(args.rebalance)
        ref_pred = _predict_all(model, reference)
        alpha = balance_alpha(reference.responses, ref_pred, reference.exposures)
        model = rebalance_intercept(model, alpha)
        print(f"rebalanced with alpha = {alpha!r} from {args.rebalance}")
    predictions = _predict_all(model, portfolio)
    io.write_predictions(args.out, portfolio, predictions)
    print(f"wrote {len(portfolio)} predictions to {args.out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    portfolio = io.load_portfolio(args.portfolio)
    portfolio = _test_split(portfolio, args.holdout_period)
    predicted = io.load_predictions(args.predictions, portfolio)
    benchmark = (io.load_predictions(args.benchmark, portfolio)
                 if args.benchmark else None)
    report = evaluate_predictions(
        portfolio.responses, predicted, portfolio.exposures, benchmark,
        abscissa=args.abscissa,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    report_path = os.path.join(args.out_dir, "report.txt")
    io.write_report(report, report_path, benchmark_name=args.benchmark)
    written = [report_path]
    if not args.no_figures:
        from . import plots

        lorenz_path = os.path.join(args.out_dir, "lorenz.png")
        plots.save_lorenz_figure(report.lorenz, lorenz_path)
        written.append(lorenz_path)
        if report.premium_diffs is not None:
            diff_path = os.path.join(args.out_dir, "premium_diff.png")
            plots.save_premium_diff_figure(report.premium_diffs, diff_path)
            written.append(diff_path)
    print(f"gini = {report.gini!r}")
    print(f"loss_ratio = {report.loss_ratio!r}")
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def _parse_covariate_effects(config):
    effects = {}
    for key, value in config.items():
        if not key.startswith("covariate."):
            continue
        name = key[len("covariate."):]
        levels = {}
        for part in value.split(","):
            level, _, coef = part.strip().partition(":")
            if not coef:
                raise DataValidationError(
                    f"covariate effect {key} entry {part!r}: want level:coefficient"
                )
            levels[level.strip()] = float(coef)
        effects[name] = levels
    return effects or None


def _cmd_simulate(args) -> int:
    config = io.parse_config(args.config)

    def need(key):
        if key not in config:
            raise DataValidationError(f"{args.config}: missing key {key!r}")
        return config[key]

    family = io.family_from_config(need("family"), config.get("power"))
    if family.is_tweedie and len(family.power_grid()) != 1:
        raise DataValidationError("simulation needs a single true power value")
    law = ExposureLaw(
        kind=config.get("exposure_law", "log-uniform"),
        low=float(config.get("exposure_low", 1.0)),
        high=float(config.get("exposure_high", 1000.0)),
    )
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    spec = SimulationSpec(
        n_industries=int(need("n_industries")),
        branches_per_industry=int(need("branches_per_industry")),
        units_per_branch=int(need("units_per_branch")),
        periods=int(need("periods")),
        family=family,
        dispersion=float(need("dispersion")),
        intercept=float(need("intercept")),
        sigma2_industry=float(config.get("sigma2_industry", 0.0)),
        sigma2_branch=float(config.get("sigma2_branch", 0.0)),
        exposure_law=law,
        covariate_effects=_parse_covariate_effects(config),
        seed=seed,
    )
    portfolio, truth = simulate_portfolio(spec)
    io.write_portfolio(portfolio, args.out)
    print(f"wrote {len(portfolio)} observations to {args.out}")
    if args.truth_out:
        io.write_truth(truth, args.truth_out)
        print(f"wrote ground truth to {args.truth_out}")
    return EXIT_OK


def _cmd_subset_select(args) -> int:
    portfolio = io.load_portfolio(args.portfolio)
    portfolio = _train_split(portfolio, args.holdout_period)
    family = io.family_from_config(args.family, args.power)
    entries = best_subset(
        portfolio, _split_csv(args.candidates), family,
        forced_covariates=_split_csv(args.forced) if args.forced else (),
    )
    lines = ["rank\taic\tconverged\tpower\tcovariates"]
    for rank, entry in enumerate(entries, start=1):
        label = ",".join(entry.covariates) if entry.covariates else "(none)"
        lines.append(
            f"{rank}\t{entry.aic!r}\t{entry.converged}\t{entry.power!r}\t{label}"
        )
    table = "\n".join(lines) + "\n"
    if args.out:
        io._atomic_write(args.out, table)
        print(f"wrote ranking to {args.out}")
    else:
        print(table, end="")
    return EXIT_OK


def _cmd_bin(args) -> int:
    portfolio = io.load_portfolio(args.portfolio)
    portfolio = _train_split(portfolio, args.holdout_period)
    family = io.family_from_config(args.family, args.power)
    k_grid = tuple(int(k) for k in _split_csv(args.k_grid))
    result = cluster_grid_search(
        portfolio, args.covariate, k_grid, family,
        forced_covariates=_split_csv(args.forced) if args.forced else (),
    )
    lines = [f"covariate = {args.covariate}", f"best_k = {result.best_k}", ""]
    lines.append("[aic_by_k]")
    for k in sorted(result.aic_by_k):
        lines.append(f"{k}\t{result.aic_by_k[k]!r}")
    lines.append("")
    lines.append("[cluster_map]")
    for level in portfolio.schema.levels[args.covariate]:
        lines.append(f"{level}\t{result.mapping[level]}")
    lines.append("")
    lines.append("[cluster_effects]")
    for label in sorted(result.cluster_effects):
        lines.append(f"{label}\t{result.cluster_effects[label]!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        io._atomic_write(args.out, text)
        print(f"wrote binning report to {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="credrate",
        description="Ratemaking for hierarchically structured portfolios: "
                    "hierarchical credibility, Tweedie/Gaussian GLMs, and "
                    "combined fits, with actuarial lift evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "fit", help="fit a model and write a model file",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="config keys (flags override): family, power, covariates, estimator",
    )
    p.add_argument("--portfolio", required=True, help="portfolio CSV")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--config", help="flat key=value config (family, power, covariates, estimator)")
    p.add_argument("--family", choices=[FamilySpec.GAUSSIAN, FamilySpec.TWEEDIE])
    p.add_argument("--power", help="tweedie power: value, comma grid, or 'default'")
    p.add_argument("--covariates", help="comma-separated covariate names")
    p.add_argument("--estimator", choices=["jewell", "glmc"])
    p.add_argument("--holdout-period", type=int,
                   help="train on periods strictly before this period")
    p.add_argument("--allow-unconverged", action="store_true",
                   help="exit 0 even if the fit did not converge")
    p.set_defaults(handler=_cmd_fit)

    p = sub.add_parser("predict", help="score a portfolio with a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--portfolio", required=True)
    p.add_argument("--out", required=True, help="predictions CSV to write")
    p.add_argument("--rebalance", metavar="REFERENCE_CSV",
                   help="shift the intercept so totals balance on this dataset")
    p.set_defaults(handler=_cmd_predict)

    p = sub.add_parser("evaluate", help="lift metrics for a prediction file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--portfolio", required=True, help="observed portfolio CSV")
    p.add_argument("--benchmark", help="benchmark predictions CSV")
    p.add_argument("--holdout-period", type=int,
                   help="evaluate on periods at or after this period")
    p.add_argument("--abscissa", choices=["weight", "predicted"], default="weight",
                   help="Lorenz x axis convention")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true",
                   help="skip rendering figures next to the report")
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser(
        "simulate", help="generate a seeded synthetic portfolio",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "config keys:\n"
            "  n_industries, branches_per_industry, units_per_branch, periods\n"
            "  family (gaussian-identity | tweedie-log), power (single value)\n"
            "  dispersion, intercept, sigma2_industry, sigma2_branch\n"
            "  exposure_law (constant | log-uniform), exposure_low, exposure_high\n"
            "  covariate.<name> = level:coef,level:coef,...   (repeatable)\n"
            "  seed (64-bit integer; --seed overrides)"
        ),
    )
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="portfolio CSV to write")
    p.add_argument("--truth-out", help="ground-truth sidecar to write")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("subset-select", help="best-subset search ranked by AIC")
    p.add_argument("--portfolio", required=True)
    p.add_argument("--candidates", required=True, help="comma-separated candidates")
    p.add_argument("--forced", help="comma-separated always-included covariates")
    p.add_argument("--family", required=True,
                   choices=[FamilySpec.GAUSSIAN, FamilySpec.TWEEDIE])
    p.add_argument("--power")
    p.add_argument("--holdout-period", type=int)
    p.add_argument("--out", help="write the ranking table here instead of stdout")
    p.set_defaults(handler=_cmd_subset_select)

    p = sub.add_parser("bin", help="cluster one covariate's coefficients by AIC")
    p.add_argument("--portfolio", required=True)
    p.add_argument("--covariate", required=True)
    p.add_argument("--k-grid", required=True, help="comma-separated cluster counts")
    p.add_argument("--forced", help="comma-separated always-included covariates")
    p.add_argument("--family", required=True,
                   choices=[FamilySpec.GAUSSIAN, FamilySpec.TWEEDIE])
    p.add_argument("--power")
    p.add_argument("--holdout-period", type=int)
    p.add_argument("--out", help="write the binning report here instead of stdout")
    p.set_defaults(handler=_cmd_bin)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataValidationError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        for violation in exc.violations[:20]:
            print(f"  - {violation}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CredrateError as exc:  # catch-all for the package taxonomy
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
