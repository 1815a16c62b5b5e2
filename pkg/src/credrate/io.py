"""File formats: portfolio/claim CSVs, fitted-model files, evaluation
reports, ground-truth sidecars, and flat key-value configs.

Portfolio CSV columns: ``unit_id, industry_id, branch_id, period,
exposure, response`` then covariate columns (``claim_amount`` replaces
``response`` in raw claim files).  The missing marker literal is ``NA``.

Model files are versioned, human-readable structured text: scalar
``key = value`` lines followed by ``[section]`` blocks of tab-separated
rows.  Floats are written with ``repr`` so a written model reloads
bit-for-bit.  All writes go through a temp file and an atomic rename.
"""

from __future__ import annotations

import csv
import os
import warnings

import numpy as np

from .credibility import CredibilityFit, VarianceComponents
from .errors import DataValidationError
from .glm import GlmFit
from .glmc import GlmcFit
from .metrics import EvaluationReport
from .portfolio import (
    MISSING,
    CovariateSchema,
    FamilySpec,
    Observation,
    Portfolio,
    validate_portfolio,
)
from .simulate import SimulationTruth

MODEL_FORMAT = "credrate-model/1"
TRUTH_FORMAT = "credrate-truth/1"
REPORT_FORMAT = "credrate-report/1"

_BASE_COLUMNS = ("unit_id", "industry_id", "branch_id", "period", "exposure")


def _atomic_write(path: str, text: str):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(text)
    os.replace(tmp, path)


def _parse_float(value: str, where: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise DataValidationError(f"{where}: not a number: {value!r}")


def _parse_int(value: str, where: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise DataValidationError(f"{where}: not an integer: {value!r}")


# ---------------------------------------------------------------------------
# Portfolio and claim CSVs
# ---------------------------------------------------------------------------

def load_portfolio(path: str, covariates=None, *, value_column: str = "response",
                   missing_marker: str = MISSING) -> Portfolio:
    """Read and validate a portfolio CSV.

    ``covariates`` names the covariate columns to ingest; ``None`` takes
    every non-standard column.  Declared-but-extra file columns are
    ignored with a warning.  Leading ``# schema`` comment lines, when
    present, pin each covariate's level order (the first level is the
    reference); otherwise levels are derived from the data with the
    missing marker first.  The loaded portfolio must pass every
    structural check or the load fails with the violation list.
    """
    rows, names, declared = _read_rows(path, covariates, value_column)
    observations = []
    for line_no, row in rows:
        where = f"{path}:{line_no}"
        obs = Observation(
            industry_id=row["industry_id"],
            branch_id=row["branch_id"],
            unit_id=row["unit_id"],
            period=_parse_int(row["period"], where),
            exposure=_parse_float(row["exposure"], where),
            response=_parse_float(row[value_column], where),
            covariates=tuple((name, row.get(name, missing_marker) or missing_marker)
                             for name in names),
        )
        if obs.exposure <= 0:
            raise DataValidationError(
                f"{where}: exposure must be > 0, got {obs.exposure}"
            )
        observations.append(obs)
    if not observations:
        raise DataValidationError(f"{path}: no data rows")
    schema = None
    if declared:
        kept = {name: lvls for name, lvls in declared.items() if name in names}
        if set(kept) == set(names):
            schema = CovariateSchema(levels=kept, missing_marker=missing_marker)
    portfolio = Portfolio.from_observations(observations, schema=schema)
    violations = validate_portfolio(portfolio)
    if violations:
        raise DataValidationError(
            f"{path}: portfolio failed validation ({len(violations)} violations)",
            violations,
        )
    return portfolio


def _read_rows(path, covariates, value_column):
    if not os.path.exists(path):
        raise DataValidationError(f"file not found: {path}")
    declared: dict[str, tuple[str, ...]] = {}
    n_comments = 0
    with open(path, newline="", encoding="utf-8") as handle:
        body: list[str] = []
        in_header = True
        for line in handle:
            if in_header and line.startswith("#"):
                n_comments += 1
                parts = line[1:].strip().split("\t")
                if parts and parts[0] == "schema" and len(parts) >= 3:
                    declared[parts[1]] = tuple(parts[2:])
                continue
            in_header = False
            body.append(line)
    reader = csv.DictReader(body)
    header = reader.fieldnames or []
    required = set(_BASE_COLUMNS) | {value_column}
    missing = required - set(header)
    if missing:
        raise DataValidationError(
            f"{path}: missing required columns: {', '.join(sorted(missing))}"
        )
    if covariates is None:
        names = tuple(c for c in header if c not in required)
    else:
        names = tuple(covariates)
        unknown = set(names) - set(header)
        if unknown:
            raise DataValidationError(
                f"{path}: declared covariates not in header: "
                f"{', '.join(sorted(unknown))}"
            )
        extras = set(header) - required - set(names)
        if extras:
            warnings.warn(
                f"{path}: ignoring extra columns: {', '.join(sorted(extras))}",
                RuntimeWarning, stacklevel=3,
            )
    rows = [(i + 2 + n_comments, row) for i, row in enumerate(reader)]
    return rows, names, declared


def write_portfolio(portfolio: Portfolio, path: str):
    """Portfolio back to CSV in observation order (round-trips exactly).

    Leading ``# schema`` comment lines pin each covariate's level order so
    the reference level survives the round trip.
    """
    names = portfolio.schema.names
    lines = [
        "# schema\t{}\t{}".format(name, "\t".join(portfolio.schema.levels[name]))
        for name in names
    ]
    lines.append(",".join(_BASE_COLUMNS + ("response",) + names))
    for obs in portfolio.observations:
        values = {name: portfolio.schema.missing_marker for name in names}
        values.update(dict(obs.covariates))
        lines.append(",".join([
            obs.unit_id, obs.industry_id, obs.branch_id, str(obs.period),
            repr(obs.exposure), repr(obs.response),
            *(values[name] for name in names),
        ]))
    _atomic_write(path, "\n".join(lines) + "\n")


def load_claims(path: str, covariates=None, *, missing_marker: str = MISSING):
    """Read raw claim rows (``claim_amount`` column instead of ``response``)."""
    from .claims import RawClaimRecord

    rows, names, _ = _read_rows(path, covariates, "claim_amount")
    records = []
    for line_no, row in rows:
        where = f"{path}:{line_no}"
        records.append(RawClaimRecord(
            unit_id=row["unit_id"],
            industry_id=row["industry_id"],
            branch_id=row["branch_id"],
            period=_parse_int(row["period"], where),
            exposure=_parse_float(row["exposure"], where),
            claim_amount=_parse_float(row["claim_amount"], where),
            covariates=tuple((name, row.get(name, missing_marker) or missing_marker)
                             for name in names),
        ))
    if not records:
        raise DataValidationError(f"{path}: no data rows")
    return records


def write_predictions(path: str, portfolio: Portfolio, predictions):
    """Per-record predictions CSV, keyed like the portfolio."""
    lines = ["unit_id,industry_id,branch_id,period,exposure,prediction"]
    for obs, pred in zip(portfolio.observations, predictions):
        lines.append(",".join([
            obs.unit_id, obs.industry_id, obs.branch_id, str(obs.period),
            repr(obs.exposure), repr(float(pred)),
        ]))
    _atomic_write(path, "\n".join(lines) + "\n")


def load_predictions(path: str, portfolio: Portfolio) -> np.ndarray:
    """Predictions aligned to a portfolio by (unit, industry, branch, period).

    The file may cover a superset of the portfolio (e.g. full-portfolio
    predictions evaluated on a holdout split); every portfolio record
    must be present exactly once.
    """
    if not os.path.exists(path):
        raise DataValidationError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        required = {"unit_id", "industry_id", "branch_id", "period", "prediction"}
        missing = required - set(reader.fieldnames or [])
        if missing:
            raise DataValidationError(
                f"{path}: missing columns: {', '.join(sorted(missing))}"
            )
        table: dict[tuple, float] = {}
        for i, row in enumerate(reader):
            where = f"{path}:{i + 2}"
            key = (row["unit_id"], row["industry_id"], row["branch_id"],
                   _parse_int(row["period"], where))
            if key in table:
                raise DataValidationError(f"{where}: duplicate prediction key {key}")
            table[key] = _parse_float(row["prediction"], where)
    values = np.empty(len(portfolio))
    for i, obs in enumerate(portfolio.observations):
        key = (obs.unit_id, obs.industry_id, obs.branch_id, obs.period)
        if key not in table:
            raise DataValidationError(f"{path}: no prediction for record {key}")
        values[i] = table[key]
    return values


# ---------------------------------------------------------------------------
# Structured text (sections of tab-separated rows)
# ---------------------------------------------------------------------------

def _render_sections(scalars: dict, sections: dict[str, list[tuple]]) -> str:
    out = []
    for key, value in scalars.items():
        out.append(f"{key} = {value}")
    for name, rows in sections.items():
        out.append("")
        out.append(f"[{name}]")
        for row in rows:
            out.append("\t".join(str(v) for v in row))
    return "\n".join(out) + "\n"


def _parse_sections(path: str):
    if not os.path.exists(path):
        raise DataValidationError(f"file not found: {path}")
    scalars: dict[str, str] = {}
    sections: dict[str, list[list[str]]] = {}
    current: list[list[str]] | None = None
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                current = sections.setdefault(line[1:-1], [])
            elif current is not None:
                current.append(line.split("\t"))
            elif "=" in line:
                key, _, value = line.partition("=")
                scalars[key.strip()] = value.strip()
            else:
                raise DataValidationError(f"{path}:{line_no}: unparseable line: {line!r}")
    return scalars, sections


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def _credibility_sections(cred: CredibilityFit) -> dict[str, list[tuple]]:
    return {
        "variance_components": [
            ("sigma2", repr(cred.components.sigma2)),
            ("sigma2_branch", repr(cred.components.sigma2_branch)),
            ("sigma2_industry", repr(cred.components.sigma2_industry)),
            ("clipped", ",".join(str(flag) for flag in cred.components.clipped)),
        ],
        "industry_table": [
            (ind, repr(cred.industry_credibility[ind]), repr(cred.industry_zmean[ind]),
             repr(cred.industry_predictor[ind]))
            for ind in sorted(cred.industry_predictor)
        ],
        "branch_table": [
            (ind, br, repr(cred.branch_means[(ind, br)]),
             repr(cred.branch_weights[(ind, br)]),
             repr(cred.branch_credibility[(ind, br)]),
             repr(cred.branch_predictor[(ind, br)]))
            for ind, br in sorted(cred.branch_predictor)
        ],
    }


def _credibility_from_sections(scalars, sections) -> CredibilityFit:
    comp = dict((row[0], row[1]) for row in sections["variance_components"])
    clipped = tuple(v == "True" for v in comp["clipped"].split(","))
    components = VarianceComponents(
        sigma2=float(comp["sigma2"]),
        sigma2_branch=float(comp["sigma2_branch"]),
        sigma2_industry=float(comp["sigma2_industry"]),
        clipped=clipped,
    )
    industry_credibility, industry_zmean, industry_predictor = {}, {}, {}
    for ind, q, zmean, pred in sections["industry_table"]:
        industry_credibility[ind] = float(q)
        industry_zmean[ind] = float(zmean)
        industry_predictor[ind] = float(pred)
    branch_means, branch_weights, branch_credibility, branch_predictor = {}, {}, {}, {}
    for ind, br, mean, weight, z, pred in sections["branch_table"]:
        key = (ind, br)
        branch_means[key] = float(mean)
        branch_weights[key] = float(weight)
        branch_credibility[key] = float(z)
        branch_predictor[key] = float(pred)
    return CredibilityFit(
        mu_hat=float(scalars["mu_hat"]),
        components=components,
        branch_means=branch_means,
        branch_weights=branch_weights,
        branch_credibility=branch_credibility,
        industry_credibility=industry_credibility,
        industry_zmean=industry_zmean,
        industry_predictor=industry_predictor,
        branch_predictor=branch_predictor,
        mu_fallback=scalars["mu_fallback"] == "True",
    )


def save_model(path: str, fit: CredibilityFit | GlmcFit):
    """Write a fitted model as versioned, auditable structured text."""
    if isinstance(fit, CredibilityFit):
        scalars = {
            "format": MODEL_FORMAT,
            "estimator": "jewell",
            "mu_hat": repr(fit.mu_hat),
            "mu_fallback": fit.mu_fallback,
        }
        _atomic_write(path, _render_sections(scalars, _credibility_sections(fit)))
        return
    if not isinstance(fit, GlmcFit):
        raise DataValidationError(f"cannot save object of type {type(fit).__name__}")
    cred = fit.credibility
    scalars = {
        "format": MODEL_FORMAT,
        "estimator": "glmc",
        "family": fit.family,
        "power": repr(fit.power),
        "dispersion": repr(fit.glm.dispersion),
        "deviance": repr(fit.glm.deviance),
        "log_likelihood": repr(fit.glm.log_likelihood),
        "rank": fit.glm.rank,
        "n_obs": fit.glm.n_obs,
        "base_level": repr(fit.base_level),
        "iterations": fit.iterations,
        "converged": fit.converged,
        "mu_hat": repr(cred.mu_hat),
        "mu_fallback": cred.mu_fallback,
    }
    sections = {
        "coefficients": [
            (name, repr(fit.glm.coefficients[name])) for name in fit.glm.column_names
        ],
        "dropped_columns": [(name,) for name in fit.glm.dropped_columns],
        "covariate_levels": [
            (name, *fit.covariate_levels[name]) for name in fit.covariates
        ],
        "u_industry": [
            (ind, repr(fit.u_industry[ind])) for ind in sorted(fit.u_industry)
        ],
        "u_branch": [
            (ind, br, repr(fit.u_branch[(ind, br)]))
            for ind, br in sorted(fit.u_branch)
        ],
    }
    sections.update(_credibility_sections(cred))
    _atomic_write(path, _render_sections(scalars, sections))


def load_model(path: str) -> CredibilityFit | GlmcFit:
    """Reload a saved model; numeric state is bit-identical to the save."""
    scalars, sections = _parse_sections(path)
    fmt = scalars.get("format")
    if fmt != MODEL_FORMAT:
        raise DataValidationError(f"{path}: unsupported model format {fmt!r}")
    estimator = scalars.get("estimator")
    if estimator == "jewell":
        return _credibility_from_sections(scalars, sections)
    if estimator != "glmc":
        raise DataValidationError(f"{path}: unknown estimator {estimator!r}")

    cred = _credibility_from_sections(scalars, sections)
    coefficients = {name: float(v) for name, v in sections["coefficients"]}
    column_names = tuple(name for name, _ in sections["coefficients"])
    covariate_levels = {
        row[0]: tuple(row[1:]) for row in sections.get("covariate_levels", [])
    }
    covariates = tuple(covariate_levels)
    terms: list[tuple[str, str] | None] = []
    for name in column_names:
        if name == "intercept":
            terms.append(None)
        else:
            cov, _, level = name.partition("=")
            terms.append((cov, level))
    glm = GlmFit(
        coefficients=coefficients,
        dispersion=float(scalars["dispersion"]),
        power=float(scalars["power"]),
        deviance=float(scalars["deviance"]),
        log_likelihood=float(scalars["log_likelihood"]),
        fitted_means=np.empty(0),
        iterations=int(scalars["iterations"]),
        converged=scalars["converged"] == "True",
        family=scalars["family"],
        rank=int(scalars["rank"]),
        n_obs=int(scalars["n_obs"]),
        offset=np.empty(0),
        column_names=column_names,
        terms=tuple(terms),
        dropped_columns=tuple(row[0] for row in sections.get("dropped_columns", [])),
    )
    return GlmcFit(
        glm=glm,
        credibility=cred,
        u_industry={ind: float(v) for ind, v in sections["u_industry"]},
        u_branch={(ind, br): float(v) for ind, br, v in sections["u_branch"]},
        iterations=int(scalars["iterations"]),
        converged=scalars["converged"] == "True",
        trajectory=(),
        family=scalars["family"],
        power=float(scalars["power"]),
        base_level=float(scalars["base_level"]),
        covariates=covariates,
        covariate_levels=covariate_levels,
    )


# ---------------------------------------------------------------------------
# Evaluation reports and ground truth
# ---------------------------------------------------------------------------

def render_report(report: EvaluationReport, *, benchmark_name: str | None = None) -> str:
    """Evaluation report as structured text with the Lorenz table inline."""
    scalars = {
        "format": REPORT_FORMAT,
        "records": report.n_records,
        "gini": repr(report.gini),
        "loss_ratio": repr(report.loss_ratio),
        "alpha": repr(report.alpha),
    }
    if report.premium_diffs is not None:
        scalars["benchmark"] = benchmark_name or "benchmark"
        scalars["excluded_nonpositive_benchmark"] = report.n_excluded_benchmark
    sections: dict[str, list[tuple]] = {
        "lorenz": [("cum_share", "cum_observed_share")] + [
            (repr(x), repr(y)) for x, y in report.lorenz
        ],
    }
    if report.premium_diffs is not None:
        sections["premium_diff"] = [("record", "relative_diff")] + [
            (str(i), repr(float(r)))
            for i, r in enumerate(report.premium_diffs)
            if not np.isnan(r)
        ]
    return _render_sections(scalars, sections)


def write_report(report: EvaluationReport, path: str, *, benchmark_name=None):
    _atomic_write(path, render_report(report, benchmark_name=benchmark_name))


def write_truth(truth: SimulationTruth, path: str):
    """Ground-truth sidecar for a simulated portfolio."""
    scalars = {
        "format": TRUTH_FORMAT,
        "seed": truth.spec.seed,
        "family": truth.spec.family.family,
        "intercept": repr(truth.spec.intercept),
        "dispersion": repr(truth.spec.dispersion),
        "sigma2_industry": repr(truth.spec.sigma2_industry),
        "sigma2_branch": repr(truth.spec.sigma2_branch),
    }
    sections = {
        "u_industry": [(ind, repr(v)) for ind, v in sorted(truth.u_industry.items())],
        "u_branch": [
            (ind, br, repr(v)) for (ind, br), v in sorted(truth.u_branch.items())
        ],
        "true_means": [(str(i), repr(float(m))) for i, m in enumerate(truth.true_means)],
    }
    _atomic_write(path, _render_sections(scalars, sections))


# ---------------------------------------------------------------------------
# Flat key-value configs
# ---------------------------------------------------------------------------

def parse_config(path: str) -> dict[str, str]:
    """Flat ``key = value`` config; ``#`` comments and blank lines ignored."""
    if not os.path.exists(path):
        raise DataValidationError(f"file not found: {path}")
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataValidationError(
                    f"{path}:{line_no}: expected 'key = value', got {line!r}"
                )
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def family_from_config(family: str, power: str | None) -> FamilySpec:
    """Build a family from config/flag strings.

    ``power`` accepts a single value, a comma list (profiling grid), or
    ``default`` for the standard grid; ignored for gaussian-identity.
    """
    if family == FamilySpec.GAUSSIAN:
        return FamilySpec(FamilySpec.GAUSSIAN)
    if family != FamilySpec.TWEEDIE:
        raise DataValidationError(f"unknown family {family!r}")
    if power is None or power == "default":
        return FamilySpec(FamilySpec.TWEEDIE)
    values = tuple(float(v) for v in power.split(",") if v.strip())
    if len(values) == 1:
        return FamilySpec(FamilySpec.TWEEDIE, values[0])
    return FamilySpec(FamilySpec.TWEEDIE, values)
