"""Asymptotic t-tests and confidence intervals for H0: LATE = delta_null."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from scipy.special import ndtr, ndtri

__all__ = ["TestResult", "t_test", "normal_cdf", "normal_quantile"]


def normal_cdf(x: float) -> float:
    return float(ndtr(x))


def normal_quantile(p: float) -> float:
    return float(ndtri(p))


@dataclass(frozen=True)
class TestResult:
    """Outcome of a two-sided test against the standard normal.

    ``degenerate`` flags a zero variance with a nonzero discrepancy, where
    the statistic is infinite and the p-value zero.
    """

    __test__ = False  # keep pytest from collecting this class

    delta_null: float
    t_stat: float
    p_value: float
    reject: bool
    ci: tuple[float, float]
    alpha: float
    degenerate: bool = False

    def as_dict(self) -> dict:
        out = asdict(self)
        out["ci"] = list(self.ci)
        for key in ("t_stat",):
            if math.isinf(out[key]):
                out[key] = "inf" if out[key] > 0 else "-inf"
        return out


def t_test(delta_hat: float, variance: float, n_pairs: int, delta_null: float = 0.0,
           alpha: float = 0.05) -> TestResult:
    """Test ``H0: LATE = delta_null`` with ``t = sqrt(n)(delta_hat - delta_null)/sqrt(variance)``.

    ``variance`` is on the ``sqrt(n)`` scale, as returned by the estimators
    in :mod:`mpiv.variance`.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not variance >= 0.0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")
    se = math.sqrt(variance / n_pairs)
    z = normal_quantile(1.0 - alpha / 2.0)
    diff = delta_hat - delta_null
    ci = (delta_hat - z * se, delta_hat + z * se)
    if se == 0.0:
        if diff == 0.0:
            return TestResult(delta_null, 0.0, 1.0, False, ci, alpha)
        return TestResult(delta_null, math.copysign(math.inf, diff), 0.0, True, ci, alpha,
                          degenerate=True)
    t = diff / se
    p = min(1.0, 2.0 * normal_cdf(-abs(t)))
    return TestResult(delta_null, t, p, bool(abs(t) > z), ci, alpha)
