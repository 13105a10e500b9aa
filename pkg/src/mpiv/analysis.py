"""End-to-end analysis of one experiment and report formatting."""

from __future__ import annotations

import json
import math
from typing import Sequence

from .data import LateReport, ObservedSample, PairStructure
from .estimators import adjusted_estimate, fit_linear_working_models, wald_estimate
from .inference import t_test
from .variance import check_pairs_balanced, nu_hat_sq, nu_hat_sq_adj, omega_hat_sq, omega_pfe

__all__ = ["SCHEMA_VERSION", "SE_CHOICES", "analyze", "report_to_json", "format_table"]

SCHEMA_VERSION = "1.0"
SE_CHOICES = ("nu", "omega", "omega-pfe-hc0", "omega-pfe-hc1", "nu-adj")
_LABELS = {
    "nu": "SE (consistent)",
    "omega": "SE (2SLS robust)",
    "omega_pfe_hc0": "SE (pair FE, HC0)",
    "omega_pfe_hc1": "SE (pair FE, HC1)",
    "nu_adj": "SE (adjusted, consistent)",
}


def _expand(se: Sequence[str], adjusted: bool) -> list[str]:
    chosen: list[str] = []
    for s in se:
        if s == "all":
            chosen.extend(SE_CHOICES[:4])
            if adjusted:
                chosen.append("nu-adj")
        elif s in SE_CHOICES:
            chosen.append(s)
        else:
            raise ValueError(f"unknown variance estimator {s!r}")
    if "nu-adj" in chosen and not adjusted:
        raise ValueError("nu-adj needs a covariate adjustment (adjust='linear')")
    return list(dict.fromkeys(chosen))


def analyze(sample: ObservedSample, structure: PairStructure, se: Sequence[str] = ("nu",),
            adjust: str = "none", zeta: str | Sequence[str] = "w",
            delta_nulls: Sequence[float] = (0.0,), alpha: float = 0.05) -> LateReport:
    """Wald (and optionally adjusted) estimate with the requested variances and tests."""
    if adjust not in ("none", "linear"):
        raise ValueError("adjust must be 'none' or 'linear'")
    chosen = _expand(se, adjust == "linear")
    check_pairs_balanced(sample, structure)
    n = structure.n_pairs
    delta, cells = wald_estimate(sample)
    report = LateReport(delta_hat=delta, first_stage=cells.first_stage, n_pairs=n)
    if structure.order_source != "matcher":
        report.notes.append(f"pairs-of-pairs ordering: {structure.order_source}")

    for name in chosen:
        key = name.replace("-", "_")
        if name == "nu":
            var, comps = nu_hat_sq(sample, structure, delta, cells)
            if comps.clamped:
                report.notes.append("nu: negative estimate clamped to 0")
        elif name == "omega":
            var = omega_hat_sq(sample, delta_hat=delta)
        elif name.startswith("omega-pfe"):
            var = omega_pfe(sample, structure, name[-3:].upper(), delta_hat=delta, cells=cells)
        else:
            continue
        report.variances[key] = var

    if adjust == "linear":
        models = fit_linear_working_models(sample, structure, zeta)
        delta_adj, cells_adj = adjusted_estimate(sample, models)
        report.delta_hat_adj = delta_adj
        report.first_stage_adj = cells_adj.first_stage
        if "nu-adj" in chosen:
            var, comps = nu_hat_sq_adj(sample, structure, delta_adj, models, cells_adj)
            if comps.clamped:
                report.notes.append("nu_adj: negative estimate clamped to 0")
            report.variances["nu_adj"] = var

    for key, var in report.variances.items():
        est = report.delta_hat_adj if key == "nu_adj" else delta
        report.tests[key] = [t_test(est, var, n, d0, alpha) for d0 in delta_nulls]
    return report


def report_to_json(report: LateReport, extra: dict | None = None) -> str:
    ses = report.standard_errors()
    doc = {
        "schema_version": SCHEMA_VERSION,
        "n_pairs": report.n_pairs,
        "delta_hat": report.delta_hat,
        "first_stage": report.first_stage,
        "delta_hat_adj": report.delta_hat_adj,
        "first_stage_adj": report.first_stage_adj,
        "variances": report.variances,
        "standard_errors": ses,
        "tests": {k: [t.as_dict() for t in v] for k, v in report.tests.items()},
        "notes": report.notes,
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, allow_nan=False)


def _stars(p: float) -> str:
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.10 else ""


def format_table(report: LateReport) -> str:
    """Estimate rows followed by parenthesized standard errors with stars
    (10/5/1% against the first null value)."""
    ses = report.standard_errors()
    rows: list[tuple[str, str]] = [("Wald estimate", f"{report.delta_hat:.3f}")]
    for key in ("nu", "omega", "omega_pfe_hc0", "omega_pfe_hc1"):
        if key in ses:
            p = report.tests[key][0].p_value if report.tests.get(key) else math.nan
            rows.append((_LABELS[key], f"({ses[key]:.3f}){_stars(p)}"))
    if report.delta_hat_adj is not None:
        rows.append(("Adjusted estimate", f"{report.delta_hat_adj:.3f}"))
        if "nu_adj" in ses:
            p = report.tests["nu_adj"][0].p_value
            rows.append((_LABELS["nu_adj"], f"({ses['nu_adj']:.3f}){_stars(p)}"))
    rows.append(("Pairs", str(report.n_pairs)))
    rows.append(("Sample size", str(2 * report.n_pairs)))
    width = max(len(r[0]) for r in rows)
    vwidth = max(len(r[1]) for r in rows)
    lines = [f"{label:<{width}}  {value:>{vwidth}}" for label, value in rows]
    lines.append("* p<0.10, ** p<0.05, *** p<0.01")
    return "\n".join(lines)
