"""Wald and covariate-adjusted estimators of the local average treatment effect."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import ObservedSample, PairStructure
from .regression import lstsq

__all__ = [
    "FIRST_STAGE_TOL",
    "WeakFirstStageError",
    "CellMeans",
    "WorkingModels",
    "LinearAdjustmentSpec",
    "wald_estimate",
    "transformed_outcomes",
    "build_zeta",
    "fit_linear_working_models",
    "adjusted_estimate",
    "naive_working_models",
    "naive_adjusted_estimate",
]

FIRST_STAGE_TOL = 1e-8


class WeakFirstStageError(ValueError):
    """Estimated complier share is (numerically) zero; the LATE is undefined."""

    def __init__(self, phi: np.ndarray, tol: float):
        self.phi = np.asarray(phi, dtype=float)
        super().__init__(
            f"first stage phi(1) - phi(0) = {self.phi[1] - self.phi[0]:.3g} "
            f"(phi(1)={self.phi[1]:.6g}, phi(0)={self.phi[0]:.6g}) is within {tol:g} of zero")


@dataclass(frozen=True)
class CellMeans:
    """Per-arm outcome and take-up means; index 0 is control, 1 treated."""

    psi: np.ndarray
    phi: np.ndarray

    @property
    def reduced_form(self) -> float:
        return float(self.psi[1] - self.psi[0])

    @property
    def first_stage(self) -> float:
        return float(self.phi[1] - self.phi[0])


@dataclass(frozen=True)
class WorkingModels:
    """Fitted working-model values per unit and arm.

    ``m_y[i, a]`` approximates the outcome under assignment ``a`` and
    ``m_d[i, a]`` the take-up under assignment ``a`` for unit ``i``. For the
    linear fits both columns coincide. ``beta_y``/``beta_d`` are kept when
    the models come from a linear fit.
    """

    m_y: np.ndarray
    m_d: np.ndarray
    beta_y: np.ndarray | None = None
    beta_d: np.ndarray | None = None

    def __post_init__(self) -> None:
        m_y = np.asarray(self.m_y, dtype=float)
        m_d = np.asarray(self.m_d, dtype=float)
        if m_y.ndim != 2 or m_y.shape[1] != 2 or m_y.shape != m_d.shape:
            raise ValueError("working models must be (2n, 2) arrays of equal shape")
        if not (np.all(np.isfinite(m_y)) and np.all(np.isfinite(m_d))):
            raise ValueError("working models contain non-finite values")
        object.__setattr__(self, "m_y", m_y)
        object.__setattr__(self, "m_d", m_d)

    @classmethod
    def zeros(cls, n_units: int) -> WorkingModels:
        return cls(np.zeros((n_units, 2)), np.zeros((n_units, 2)))

    @classmethod
    def arm_invariant(cls, m_y, m_d, beta_y=None, beta_d=None) -> WorkingModels:
        m_y = np.asarray(m_y, dtype=float).reshape(-1)
        m_d = np.asarray(m_d, dtype=float).reshape(-1)
        return cls(np.column_stack([m_y, m_y]), np.column_stack([m_d, m_d]), beta_y, beta_d)

    def combined(self, delta: float) -> np.ndarray:
        """``m_y - delta * m_d``, shape (2n, 2)."""
        return self.m_y - delta * self.m_d


@dataclass(frozen=True)
class LinearAdjustmentSpec:
    """Which covariates enter the linear adjustment.

    ``zeta`` is ``"w"`` (all adjustment covariates), ``"xw"`` (matching and
    adjustment covariates) or a sequence of column names such as
    ``("w1", "x2")``. Constant and duplicated columns are dropped, since a
    constant is absorbed by the pair effects anyway.
    """

    zeta: str | Sequence[str] = "w"


def _check_first_stage(phi: np.ndarray, tol: float) -> None:
    if not abs(phi[1] - phi[0]) > tol:
        raise WeakFirstStageError(phi, tol)


def wald_estimate(sample: ObservedSample, first_stage_tol: float = FIRST_STAGE_TOL
                  ) -> tuple[float, CellMeans]:
    """Ratio of the assignment effect on outcomes to that on take-up.

    Arm sums are divided by the number of pairs ``n``.
    """
    n = sample.n_pairs
    treated = sample.a == 1
    psi = np.array([sample.y[~treated].sum(), sample.y[treated].sum()]) / n
    phi = np.array([sample.d[~treated].sum(), sample.d[treated].sum()]) / n
    _check_first_stage(phi, first_stage_tol)
    return float((psi[1] - psi[0]) / (phi[1] - phi[0])), CellMeans(psi, phi)


def transformed_outcomes(sample: ObservedSample, delta_hat: float) -> np.ndarray:
    return sample.y - delta_hat * sample.d


def build_zeta(sample: ObservedSample, spec: LinearAdjustmentSpec | str | Sequence[str] = "w"
               ) -> np.ndarray:
    """Assemble the adjustment design, dropping constant and repeated columns."""
    if isinstance(spec, LinearAdjustmentSpec):
        spec = spec.zeta
    if isinstance(spec, str) and spec in ("w", "xw"):
        Z = sample.w if spec == "w" else np.hstack([sample.x, sample.w])
    else:
        names = [spec] if isinstance(spec, str) else list(spec)
        cols = []
        for name in names:
            name = name.strip()
            kind, idx = name[:1], name[1:]
            src = {"x": sample.x, "w": sample.w}.get(kind)
            if src is None or not idx.isdigit() or not 1 <= int(idx) <= src.shape[1]:
                raise ValueError(f"unknown adjustment column {name!r}")
            cols.append(src[:, int(idx) - 1])
        Z = np.column_stack(cols) if cols else np.zeros((sample.n_units, 0))
    keep: list[np.ndarray] = []
    for j in range(Z.shape[1]):
        col = Z[:, j]
        if np.all(col == col[0]):
            continue
        if any(np.array_equal(col, k) for k in keep):
            continue
        keep.append(col)
    if not keep:
        raise ValueError("no non-constant adjustment covariates selected")
    return np.column_stack(keep)


def fit_linear_working_models(sample: ObservedSample, structure: PairStructure,
                              spec: LinearAdjustmentSpec | str | Sequence[str] | np.ndarray = "w"
                              ) -> WorkingModels:
    """Optimal linear working models from pair fixed-effect regressions.

    Regresses ``Y`` and ``D`` on ``A`` and ``zeta`` with pair fixed effects
    and returns ``zeta @ beta`` as an arm-invariant working model. The
    fixed effects are absorbed by regressing within-pair differences,
    which gives the same slopes as the dummy regression.

    Raises
    ------
    RankDeficientError
        If ``zeta`` has no within-pair variation left after demeaning.
    """
    zeta = np.asarray(spec, dtype=float) if isinstance(spec, np.ndarray) else build_zeta(sample, spec)
    if zeta.ndim == 1:
        zeta = zeta[:, None]
    p = structure.pairs
    design = np.column_stack([
        sample.a[p[:, 0]] - sample.a[p[:, 1]],
        zeta[p[:, 0]] - zeta[p[:, 1]],
    ])
    rhs = np.column_stack([
        sample.y[p[:, 0]] - sample.y[p[:, 1]],
        sample.d[p[:, 0]] - sample.d[p[:, 1]],
    ])
    coef = lstsq(design, rhs, what="pair-demeaned adjustment")
    beta_y, beta_d = coef[1:, 0], coef[1:, 1]
    return WorkingModels.arm_invariant(zeta @ beta_y, zeta @ beta_d, beta_y, beta_d)


def adjusted_estimate(sample: ObservedSample, models: WorkingModels,
                      first_stage_tol: float = FIRST_STAGE_TOL) -> tuple[float, CellMeans]:
    """Covariate-adjusted LATE estimate for arbitrary working models.

    Consistency needs the working models to be fit so that their
    estimation error is asymptotically orthogonal to ``2A - 1``; that is the
    caller's responsibility and is not checked here.
    """
    a = sample.a
    psi = np.empty(2)
    phi = np.empty(2)
    for arm in (0, 1):
        ind = 2.0 * (a == arm)
        my, md = models.m_y[:, arm], models.m_d[:, arm]
        psi[arm] = np.mean(ind * (sample.y - my) + my)
        phi[arm] = np.mean(ind * (sample.d - md) + md)
    _check_first_stage(phi, first_stage_tol)
    return float((psi[1] - psi[0]) / (phi[1] - phi[0])), CellMeans(psi, phi)


def naive_working_models(sample: ObservedSample, zeta: np.ndarray | None = None) -> WorkingModels:
    """Working models implied by 2SLS on a constant, ``D`` and ``zeta`` without pair effects.

    Slopes come from OLS of ``Y`` and ``D`` on ``(1, A, zeta)``.
    """
    zeta = build_zeta(sample, "w") if zeta is None else np.asarray(zeta, dtype=float)
    if zeta.ndim == 1:
        zeta = zeta[:, None]
    design = np.column_stack([np.ones(sample.n_units), sample.a, zeta])
    coef = lstsq(design, np.column_stack([sample.y, sample.d]))
    beta_y, beta_d = coef[2:, 0], coef[2:, 1]
    return WorkingModels.arm_invariant(zeta @ beta_y, zeta @ beta_d, beta_y, beta_d)


def naive_adjusted_estimate(sample: ObservedSample, zeta: np.ndarray | None = None,
                            first_stage_tol: float = FIRST_STAGE_TOL
                            ) -> tuple[float, CellMeans, WorkingModels]:
    """2SLS of ``Y`` on a constant, ``D`` and ``W`` with ``A`` instrumenting ``D``.

    Computed as the adjusted estimator with the implied working models, so
    the same consistent variance estimator applies.
    """
    models = naive_working_models(sample, zeta)
    delta, cells = adjusted_estimate(sample, models, first_stage_tol)
    return delta, cells, models
