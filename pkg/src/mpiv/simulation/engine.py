"""Monte Carlo engine: rejection rates, bias, RMSE and power curves."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..data import ObservedSample, PairStructure
from ..estimators import (
    adjusted_estimate,
    fit_linear_working_models,
    naive_adjusted_estimate,
    wald_estimate,
)
from ..inference import normal_quantile
from ..pairing import _assign_with, make_rng, match_pairs_scalar
from ..regression import tsls
from ..variance import nu_hat_sq, nu_hat_sq_adj, omega_hat_sq, omega_pfe
from .dgp import DgpSpec, delta0_oracle, generate

log = logging.getLogger(__name__)

__all__ = [
    "TESTS",
    "TestSummary",
    "McResult",
    "run_mc",
    "power_curve",
    "simulate_replication",
]

# name -> (estimator, variance estimator)
TESTS = {
    "nu": ("wald", "nu"),
    "omega": ("wald", "omega"),
    "omega-pfe-hc0": ("wald", "omega_pfe_hc0"),
    "omega-pfe-hc1": ("wald", "omega_pfe_hc1"),
    "unadj": ("wald", "nu"),
    "naive": ("naive", "nu_adj"),
    "naive-robust": ("naive", "omega_naive"),
    "pfe": ("pfe", "nu_adj"),
}

FAILURE_WARN_SHARE = 0.001


def _check_tests(tests: Sequence[str]) -> list[str]:
    tests = list(tests)
    if not tests:
        raise ValueError("at least one test is required")
    unknown = [t for t in tests if t not in TESTS]
    if unknown:
        raise ValueError(f"unknown tests {unknown}; choose from {sorted(TESTS)}")
    return tests


def _analyze(sample: ObservedSample, structure: PairStructure, tests: Sequence[str]
             ) -> dict[str, tuple[float, float, bool]]:
    """Estimate and variance per test; ``clamped`` marks a rounding clamp of a
    consistent variance estimate to zero."""
    out: dict[str, tuple[float, float, bool]] = {}
    kinds = {TESTS[t][0] for t in tests}
    wald = adj = naive = None
    if "wald" in kinds:
        wald = wald_estimate(sample)
    if "pfe" in kinds:
        models = fit_linear_working_models(sample, structure, sample.w)
        adj = (*adjusted_estimate(sample, models), models)
    if "naive" in kinds:
        naive = naive_adjusted_estimate(sample, sample.w)
    n = sample.n_pairs
    for t in tests:
        est_kind, var_kind = TESTS[t]
        clamped = False
        if est_kind == "wald":
            delta, cells = wald
            if var_kind == "nu":
                var, comps = nu_hat_sq(sample, structure, delta, cells)
                clamped = comps.clamped
            elif var_kind == "omega":
                var = omega_hat_sq(sample, delta_hat=delta)
            else:
                corr = "HC1" if var_kind.endswith("hc1") else "HC0"
                var = omega_pfe(sample, structure, corr, delta_hat=delta, cells=cells)
        else:
            delta, cells, models = adj if est_kind == "pfe" else naive
            if var_kind == "nu_adj":
                var, comps = nu_hat_sq_adj(sample, structure, delta, models, cells)
                clamped = comps.clamped
            else:
                ones = np.ones(sample.n_units)
                fit = tsls(sample.y, sample.d, np.column_stack([ones, sample.w]), sample.a)
                var = float(n * fit.robust_vcov[0, 0])
        out[t] = (delta, var, clamped)
    return out


def simulate_replication(spec: DgpSpec, n_units: int, tests: Sequence[str], seed: int, rep: int
                         ) -> dict[str, tuple[float, float, bool]]:
    """One replication: draw, pair on the scalar covariate, randomize, analyze.

    All randomness comes from the stream keyed by ``(seed, rep)``.
    """
    rng = make_rng(int(seed), int(rep))
    pot = generate(spec, n_units, rng)
    structure = match_pairs_scalar(pot.x[:, 0])
    a = _assign_with(structure.pairs, rng)
    return _analyze(pot.observe(a), structure, tests)


def _run_chunk(spec: DgpSpec, n_units: int, tests: Sequence[str], seed: int,
               reps: Iterable[int]) -> np.ndarray:
    # rows: rep; columns: (estimate, variance, failed, clamped) per test
    reps = list(reps)
    out = np.full((len(reps), len(tests), 4), np.nan)
    for r, rep in enumerate(reps):
        try:
            res = simulate_replication(spec, n_units, tests, seed, rep)
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.debug("replication %d failed: %s", rep, exc)
            out[r, :, 2] = 1.0
            out[r, :, 3] = 0.0
            continue
        for k, t in enumerate(tests):
            est, var, clamped = res[t]
            out[r, k] = (est, var, 0.0, float(clamped))
    return out


@dataclass(frozen=True)
class TestSummary:
    """Aggregates for one test over the successful replications."""

    __test__ = False

    rejection_rate: float
    rejection_se: float
    bias: float
    bias_se: float
    rmse: float
    rmse_se: float
    mean_variance: float
    sd_variance: float
    n_ok: int
    n_failed: int
    n_clamped: int


@dataclass
class McResult:
    spec: DgpSpec
    n_units: int
    reps: int
    seed: int
    delta_null: float
    delta_true: float
    alpha: float
    summaries: dict[str, TestSummary] = field(default_factory=dict)
    estimates: np.ndarray | None = None
    variances: np.ndarray | None = None
    tests: tuple[str, ...] = ()

    def rows(self) -> list[dict]:
        """Long-format rows: model, n, test, metric, value, mc_se."""
        out = []
        metrics = (("rejection_rate", "rejection_se"), ("bias", "bias_se"), ("rmse", "rmse_se"),
                   ("mean_variance", None), ("sd_variance", None), ("n_failed", None))
        for t, s in self.summaries.items():
            for metric, se in metrics:
                out.append({
                    "model": self.spec.label,
                    "n": self.n_units,
                    "mu1": self.spec.mu1,
                    "test": t,
                    "metric": metric,
                    "value": getattr(s, metric),
                    "mc_se": getattr(s, se) if se else "",
                })
        return out


def _summarize(est: np.ndarray, var: np.ndarray, failed: np.ndarray, clamped: np.ndarray,
               n_pairs: int, delta_null: float, delta_true: float, alpha: float) -> TestSummary:
    ok = failed == 0
    e, v = est[ok], var[ok]
    n_ok = int(ok.sum())
    if n_ok == 0:
        nan = float("nan")
        return TestSummary(nan, nan, nan, nan, nan, nan, nan, nan, 0, int((~ok).sum()), 0)
    z = normal_quantile(1.0 - alpha / 2.0)
    se = np.sqrt(v / n_pairs)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, (e - delta_null) / se, np.where(e == delta_null, 0.0, np.inf))
    rej = np.abs(t) > z
    rate = float(rej.mean())
    err = e - delta_true
    bias = float(err.mean())
    mse = float(np.mean(err**2))
    rmse = math.sqrt(mse)
    sd_err = float(err.std(ddof=1)) if n_ok > 1 else 0.0
    sd_sq = float((err**2).std(ddof=1)) if n_ok > 1 else 0.0
    return TestSummary(
        rejection_rate=rate,
        rejection_se=math.sqrt(rate * (1 - rate) / n_ok),
        bias=bias,
        bias_se=sd_err / math.sqrt(n_ok),
        rmse=rmse,
        rmse_se=(sd_sq / math.sqrt(n_ok)) / (2 * rmse) if rmse > 0 else 0.0,
        mean_variance=float(v.mean()),
        sd_variance=float(v.std(ddof=1)) if n_ok > 1 else 0.0,
        n_ok=n_ok,
        n_failed=int((~ok).sum()),
        n_clamped=int(clamped[ok].sum()),
    )


def _default_jobs() -> int:
    env = os.environ.get("MPIV_JOBS")
    return max(1, int(env)) if env else 1


def run_mc(spec: DgpSpec, n_units: int, reps: int, tests: Sequence[str] = ("nu",),
           delta_null: float | None = None, alpha: float = 0.05, seed: int = 0,
           jobs: int | None = None, delta_true: float | None = None,
           oracle_draws: int = 10**7) -> McResult:
    """Run ``reps`` replications of ``spec`` at sample size ``n_units`` (= 2n).

    ``delta_null`` defaults to the LATE at ``mu1 = 0`` and ``delta_true``
    (used for bias and RMSE) to the LATE at ``spec.mu1``, both from
    :func:`delta0_oracle`. Replication ``r`` always uses the random stream
    keyed by ``(seed, r)``, so results are identical for any ``jobs``.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if n_units < 4 or n_units % 2:
        raise ValueError("n_units must be an even number >= 4")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    tests = _check_tests(tests)
    if delta_null is None:
        delta_null = delta0_oracle(spec.with_mu1(0.0), oracle_draws).value
    if delta_true is None:
        delta_true = delta0_oracle(spec, oracle_draws).value
    jobs = _default_jobs() if jobs is None else max(1, int(jobs))

    if jobs == 1:
        raw = _run_chunk(spec, n_units, tests, seed, range(reps))
    else:
        bounds = np.linspace(0, reps, min(jobs * 4, reps) + 1).astype(int)
        chunks = [range(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_chunk, spec, n_units, tests, seed, c) for c in chunks]
            raw = np.concatenate([f.result() for f in futures], axis=0)

    n_pairs = n_units // 2
    result = McResult(spec, n_units, reps, seed, float(delta_null), float(delta_true), alpha,
                      tests=tuple(tests), estimates=raw[:, :, 0], variances=raw[:, :, 1])
    for k, t in enumerate(tests):
        result.summaries[t] = _summarize(raw[:, k, 0], raw[:, k, 1], raw[:, k, 2], raw[:, k, 3],
                                         n_pairs, delta_null, delta_true, alpha)
    n_failed = int(raw[:, 0, 2].sum())
    if n_failed > FAILURE_WARN_SHARE * reps:
        log.warning("%d of %d replications failed and were excluded", n_failed, reps)
    return result


def power_curve(spec: DgpSpec, n_units: int, reps: int, mu1_grid: Sequence[float],
                tests: Sequence[str] = ("nu",), seed: int = 0, alpha: float = 0.05,
                delta_null: float | None = None, jobs: int | None = None,
                oracle_draws: int = 10**7) -> list[dict]:
    """Rejection rate of ``H0: LATE = LATE(mu1=0)`` along a grid of ``mu1``.

    Every grid point reuses the same seed, so all points and tests share
    common random numbers.
    """
    grid = [float(m) for m in mu1_grid]
    if not grid:
        raise ValueError("mu1 grid is empty")
    if delta_null is None:
        delta_null = delta0_oracle(spec.with_mu1(0.0), oracle_draws).value
    rows = []
    for mu1 in grid:
        res = run_mc(spec.with_mu1(mu1), n_units, reps, tests, delta_null, alpha, seed, jobs,
                     oracle_draws=oracle_draws)
        for t, s in res.summaries.items():
            rows.append({"model": spec.label, "n": n_units, "mu1": mu1, "test": t,
                         "rejection_rate": s.rejection_rate, "mc_se": s.rejection_se})
    return rows
