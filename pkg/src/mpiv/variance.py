"""Variance estimators for sqrt(n) times the Wald / adjusted estimator error.

All values are on the ``sqrt(n) * (estimate - LATE)`` scale; divide by the
number of pairs and take the square root for a standard error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ObservedSample, PairStructure
from .estimators import (
    FIRST_STAGE_TOL,
    CellMeans,
    WeakFirstStageError,
    WorkingModels,
    transformed_outcomes,
    wald_estimate,
)
from .regression import tsls, tsls_with_pair_fe

__all__ = [
    "NuComponents",
    "UnbalancedPairError",
    "check_pairs_balanced",
    "nu_from_outcomes",
    "nu_hat_sq",
    "omega_hat_sq",
    "omega_pfe",
    "nu_hat_sq_adj",
    "adjusted_outcomes",
]


class UnbalancedPairError(ValueError):
    """Some pairs do not have exactly one treated unit."""

    def __init__(self, bad_pairs: np.ndarray):
        self.bad_pairs = np.asarray(bad_pairs, dtype=int)
        shown = ", ".join(str(j) for j in self.bad_pairs[:20])
        more = "" if self.bad_pairs.size <= 20 else f" (+{self.bad_pairs.size - 20} more)"
        super().__init__(f"pairs without exactly one treated unit: {shown}{more}")


@dataclass(frozen=True)
class NuComponents:
    """Pieces of the consistent variance estimator.

    ``raw`` is the unclamped ratio; it can dip below zero by rounding in
    degenerate samples, in which case ``clamped`` is set and the reported
    value is 0.
    """

    tau_sq: float
    lambda_: float
    gamma: float
    denom: float
    raw: float

    @property
    def value(self) -> float:
        return max(self.raw, 0.0)

    @property
    def clamped(self) -> bool:
        return self.raw < 0.0


def check_pairs_balanced(sample: ObservedSample, structure: PairStructure) -> None:
    treated = sample.a[structure.pairs].sum(axis=1)
    bad = np.flatnonzero(treated != 1)
    if bad.size:
        raise UnbalancedPairError(bad)


def nu_from_outcomes(yhat: np.ndarray, a: np.ndarray, structure: PairStructure,
                     first_stage: float) -> NuComponents:
    """Pair-based variance formula applied to already transformed outcomes.

    Pair-of-pairs blocks are consecutive entries of ``structure.pair_order``;
    with an odd number of pairs the last one only enters the within-pair
    term.
    """
    n = structure.n_pairs
    op = structure.ordered_pairs
    dy = yhat[op[:, 0]] - yhat[op[:, 1]]
    da = a[op[:, 0]] - a[op[:, 1]]
    tau_sq = float(np.mean(dy**2))
    nb = n // 2
    sy = dy[: 2 * nb] * da[: 2 * nb]
    lam = float(2.0 / n * np.sum(sy[0::2] * sy[1::2]))
    gamma = float((yhat[a == 1].sum() - yhat[a == 0].sum()) / n)
    denom = first_stage**2
    raw = (tau_sq - 0.5 * (lam + gamma**2)) / denom
    return NuComponents(tau_sq, lam, gamma, denom, raw)


def nu_hat_sq(sample: ObservedSample, structure: PairStructure, delta_hat: float | None = None,
              cells: CellMeans | None = None) -> tuple[float, NuComponents]:
    """Consistent variance estimator for the Wald estimator."""
    if delta_hat is None or cells is None:
        delta_hat, cells = wald_estimate(sample)
    if not abs(cells.first_stage) > FIRST_STAGE_TOL:
        raise WeakFirstStageError(cells.phi, FIRST_STAGE_TOL)
    comps = nu_from_outcomes(transformed_outcomes(sample, delta_hat), sample.a, structure,
                             cells.first_stage)
    return comps.value, comps


def omega_hat_sq(sample: ObservedSample, method: str = "closed_form",
                 delta_hat: float | None = None) -> float:
    """Conventional heteroskedasticity-robust (HC0) variance from 2SLS of ``Y``
    on ``(1, D)`` instrumented by ``(1, A)``, scaled by ``n``.

    ``method="sandwich"`` runs the regression and takes ``n`` times the slope
    entry of the sandwich; ``"closed_form"`` uses the equivalent ratio
    ``(sum U^2 / n) / (phi(1) - phi(0))^2``, valid when each arm has ``n``
    units.
    """
    n = sample.n_pairs
    if method == "sandwich":
        ones = np.ones(sample.n_units)
        fit = tsls(sample.y, sample.d, ones, sample.a)
        return float(n * fit.robust_vcov[0, 0])
    if method != "closed_form":
        raise ValueError(f"unknown method {method!r}")
    delta = wald_estimate(sample)[0] if delta_hat is None else delta_hat
    u = (sample.y - sample.y.mean()) - (sample.d - sample.d.mean()) * delta
    fs = 2.0 / n * np.sum(sample.a * sample.d) - np.sum(sample.d) / n
    return float(np.sum(u**2) / n / fs**2)


def omega_pfe(sample: ObservedSample, structure: PairStructure, correction: str = "HC0",
              method: str = "closed_form", delta_hat: float | None = None,
              cells: CellMeans | None = None) -> float:
    """Robust variance from 2SLS with pair fixed effects, scaled by ``n``.

    ``HC0`` equals ``tau^2 / (2 * first_stage^2)``; ``HC1`` rescales by
    ``2n / (n - 1)`` since the regression has ``n + 1`` regressors.
    ``method="sandwich"`` runs the fixed-effect regression instead.
    """
    correction = correction.upper()
    if correction not in ("HC0", "HC1"):
        raise ValueError(f"correction must be HC0 or HC1, got {correction!r}")
    check_pairs_balanced(sample, structure)
    n = structure.n_pairs
    if method == "sandwich":
        fit = tsls_with_pair_fe(sample.y, sample.d, None, sample.a, structure)
        V = fit.hc1_vcov() if correction == "HC1" else fit.robust_vcov
        return float(n * V[0, 0])
    if method != "closed_form":
        raise ValueError(f"unknown method {method!r}")
    if delta_hat is None or cells is None:
        delta_hat, cells = wald_estimate(sample)
    yhat = transformed_outcomes(sample, delta_hat)
    p = structure.pairs
    tau_sq = np.mean((yhat[p[:, 0]] - yhat[p[:, 1]]) ** 2)
    hc0 = 0.5 * tau_sq / cells.first_stage**2
    return float(hc0 * 2 * n / (n - 1)) if correction == "HC1" else float(hc0)


def adjusted_outcomes(sample: ObservedSample, delta: float, models: WorkingModels) -> np.ndarray:
    """``Y - delta*D`` minus the arm-average of the combined working models."""
    m = models.combined(delta)
    return transformed_outcomes(sample, delta) - 0.5 * (m[:, 0] + m[:, 1])


def nu_hat_sq_adj(sample: ObservedSample, structure: PairStructure, delta_hat_adj: float,
                  models: WorkingModels, cells_adj: CellMeans) -> tuple[float, NuComponents]:
    """Consistent variance estimator for the covariate-adjusted estimator.

    The transformed outcomes and combined working models are both built
    with ``delta_hat_adj``; the arm difference term sums over all ``2n``
    units.
    """
    if not abs(cells_adj.first_stage) > FIRST_STAGE_TOL:
        raise WeakFirstStageError(cells_adj.phi, FIRST_STAGE_TOL)
    yadj = adjusted_outcomes(sample, delta_hat_adj, models)
    comps = nu_from_outcomes(yadj, sample.a, structure, cells_adj.first_stage)
    return comps.value, comps
