"""Dense OLS / just-identified 2SLS with HC0 sandwich variances and
within-pair (pair fixed effect) partialling out.

These routines are the generic substrate behind the closed-form estimators
and double as their cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .data import PairStructure

__all__ = [
    "FitResult",
    "RankDeficientError",
    "SingularInstrumentError",
    "ols",
    "lstsq",
    "tsls",
    "fwl_partial_out",
    "tsls_with_pair_fe",
    "RANK_TOL",
]

RANK_TOL = 1e-10


class RankDeficientError(np.linalg.LinAlgError):
    """Design matrix is (numerically) rank deficient.

    ``column`` is the index of a column that is a linear combination of
    the others, as identified by the pivoted QR factorization.
    """

    def __init__(self, column: int, what: str = "design"):
        self.column = int(column)
        super().__init__(f"{what} matrix is rank deficient: column {column} is collinear")


class SingularInstrumentError(np.linalg.LinAlgError):
    """Z'X is singular: an instrument carries no information about its regressor."""


@dataclass(frozen=True)
class FitResult:
    """Result of a linear fit.

    ``robust_vcov`` is the HC0 sandwich for ``coefficients``. ``n_params``
    counts every regressor in the model, including partialled-out pair
    dummies, so :meth:`hc1_vcov` applies the right degrees of freedom.
    """

    coefficients: np.ndarray
    residuals: np.ndarray
    robust_vcov: np.ndarray
    n_obs: int
    n_params: int

    def hc1_vcov(self) -> np.ndarray:
        return self.robust_vcov * (self.n_obs / (self.n_obs - self.n_params))


def _as_2d(v, m: int | None = None) -> np.ndarray:
    if v is None:
        return np.zeros((0 if m is None else m, 0))
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if m is not None and v.size == 0:
        return np.zeros((m, 0))
    return v


def _check_rank(X: np.ndarray, what: str) -> None:
    if X.shape[1]:
        _pivoted_qr(X, what)


def _pivoted_qr(X: np.ndarray, what: str = "design"):
    m, k = X.shape
    if k == 0:
        raise ValueError(f"{what} matrix has no columns")
    if k > m:
        raise RankDeficientError(m, what)
    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[0] == 0.0:
        raise RankDeficientError(int(piv[0]), what)
    rank = int(np.sum(diag > RANK_TOL * diag[0]))
    if rank < k:
        raise RankDeficientError(int(piv[rank]), what)
    return Q, R, piv


def lstsq(X, Y, what: str = "design") -> np.ndarray:
    """Rank-checked least-squares coefficients; ``Y`` may have several columns."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    Q, R, piv = _pivoted_qr(X, what)
    coef_p = scipy.linalg.solve_triangular(R, Q.T @ np.asarray(Y, dtype=float))
    coef = np.empty_like(coef_p)
    coef[piv] = coef_p
    return coef


def ols(y, X) -> FitResult:
    """Least squares of ``y`` on ``X`` via column-pivoted QR.

    Raises
    ------
    RankDeficientError
        If a column of ``X`` is collinear with the others (relative
        tolerance ``RANK_TOL`` on the diagonal of R).
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    X = _as_2d(X, y.shape[0])
    m, k = X.shape
    Q, R, piv = _pivoted_qr(X)
    coef = np.empty(k)
    coef[piv] = scipy.linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ coef
    # (X'X)^{-1} X' = R^{-1} Q' in pivoted coordinates
    H = scipy.linalg.solve_triangular(R, Q.T)
    Hu = H * resid
    V_p = Hu @ Hu.T
    V = np.empty_like(V_p)
    V[np.ix_(piv, piv)] = V_p
    return FitResult(coef, resid, 0.5 * (V + V.T), m, k)


def tsls(y, endog, exog, instruments) -> FitResult:
    """Just-identified two-stage least squares.

    Regressors are ``[endog, exog]`` and instruments ``[instruments, exog]``;
    coefficients are ordered like the regressors. ``exog`` must contain the
    intercept if one is wanted.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    m = y.shape[0]
    endog = _as_2d(endog, m)
    exog = _as_2d(exog, m)
    instruments = _as_2d(instruments, m)
    if instruments.shape[1] != endog.shape[1]:
        raise ValueError("just-identified only: need one instrument per endogenous regressor")
    X = np.hstack([endog, exog])
    Z = np.hstack([instruments, exog])
    _check_rank(X, "regressor")
    _check_rank(Z, "instrument")
    ZX = Z.T @ X
    s = np.linalg.svd(ZX, compute_uv=False)
    if s[-1] <= RANK_TOL * s[0]:
        raise SingularInstrumentError(
            f"Z'X is singular (condition {s[0] / max(s[-1], 1e-300):.3g}); weak or collinear instrument")
    coef = np.linalg.solve(ZX, Z.T @ y)
    resid = y - X @ coef
    # sandwich (Z'X)^{-1} Z' diag(u^2) Z (X'Z)^{-1}
    G = np.linalg.solve(ZX, (Z * resid[:, None]).T)
    V = G @ G.T
    return FitResult(coef, resid, 0.5 * (V + V.T), m, X.shape[1])


def fwl_partial_out(v, structure: PairStructure) -> np.ndarray:
    """Subtract the within-pair mean from every entry.

    This is the residual from projecting ``v`` on the ``n`` pair dummies.
    """
    arr = np.asarray(v, dtype=float)
    p = structure.pairs
    if arr.shape[0] != structure.n_units:
        raise ValueError("row count does not match the pair structure")
    out = np.empty_like(arr)
    half = 0.5 * (arr[p[:, 0]] - arr[p[:, 1]])
    out[p[:, 0]] = half
    out[p[:, 1]] = -half
    return out


def tsls_with_pair_fe(y, endog, exog, instruments, structure: PairStructure) -> FitResult:
    """2SLS with pair fixed effects, absorbed by within-pair demeaning.

    Returns coefficients and the HC0 sandwich for the non-dummy block only;
    these coincide with the corresponding block of the regression that
    includes all ``n`` pair dummies explicitly. ``n_params`` counts the
    dummies.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    m = y.shape[0]
    endog = _as_2d(endog, m)
    exog = _as_2d(exog, m)
    instruments = _as_2d(instruments, m)
    fit = tsls(
        fwl_partial_out(y, structure),
        fwl_partial_out(endog, structure),
        fwl_partial_out(exog, structure),
        fwl_partial_out(instruments, structure),
    )
    return FitResult(fit.coefficients, fit.residuals, fit.robust_vcov, m,
                     fit.n_params + structure.n_pairs)
