"""Data-generating processes for the Monte Carlo designs.

Two families are provided. ``"s51"`` has a single uniform covariate used
for matching; ``"s52"`` adds a second covariate ``W`` that is only used for
adjustment. All normal and uniform variates are produced from a uniform
stream by inverse-CDF transforms, so distributions (not bit streams) can
be matched across implementations.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr, ndtri

from ..data import ObservedSample
from ..pairing import make_rng

__all__ = [
    "DgpSpec",
    "PotentialData",
    "OracleResult",
    "generate",
    "potential_from_uniforms",
    "delta0_oracle",
    "limiting_variances",
    "N_UNIFORMS",
]

FAMILIES = {"s51": (1, 2, 3), "s52": (1, 2, 3, 4)}
# per-unit uniform layout: covariate source 1, covariate source 2,
# outcome noise (d=0), outcome noise (d=1), take-up noise (a=0), take-up noise (a=1)
N_UNIFORMS = 6
_TINY = 2.0**-54


@dataclass(frozen=True)
class DgpSpec:
    """Parameterization of one simulation model.

    ``mu1`` shifts ``Y(1)``; ``mu0`` is always zero. ``gamma`` and ``rho``
    only matter for ``"s52"``; ``gammas`` only for its models 3 and 4.
    """

    family: str = "s51"
    model_id: int = 1
    mu1: float = 0.0
    gamma: float = 4.0
    rho: float = 0.2
    gammas: tuple[float, float, float] = field(default=(2.0, 1.0, 2.0))

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {sorted(FAMILIES)}, got {self.family!r}")
        if self.model_id not in FAMILIES[self.family]:
            raise ValueError(f"model {self.model_id} is not defined for family {self.family}")
        if not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (-1, 1)")
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))

    @property
    def label(self) -> str:
        return f"{self.family}-m{self.model_id}"

    def with_mu1(self, mu1: float) -> DgpSpec:
        return replace(self, mu1=float(mu1))


@dataclass(frozen=True)
class PotentialData:
    """Potential outcomes and take-up decisions for every unit."""

    y1: np.ndarray
    y0: np.ndarray
    d1: np.ndarray
    d0: np.ndarray
    x: np.ndarray
    w: np.ndarray

    @property
    def complier(self) -> np.ndarray:
        return (self.d1 == 1) & (self.d0 == 0)

    def itt_outcome(self, a: int) -> np.ndarray:
        d = self.d1 if a else self.d0
        return self.y1 * d + self.y0 * (1 - d)

    def observe(self, a: np.ndarray) -> ObservedSample:
        a = np.asarray(a, dtype=float)
        d = self.d1 * a + self.d0 * (1 - a)
        y = self.y1 * d + self.y0 * (1 - d)
        return ObservedSample(y=y, d=d, a=a, x=self.x, w=self.w)


def _normal(u: np.ndarray) -> np.ndarray:
    return ndtri(np.maximum(u, _TINY))


def _covariates(spec: DgpSpec, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if spec.family == "s51":
        return u[:, 0], np.zeros(u.shape[0])
    v1 = _normal(u[:, 0])
    v2 = spec.rho * v1 + math.sqrt(1.0 - spec.rho**2) * _normal(u[:, 1])
    if spec.model_id in (1, 2):
        return ndtr(v1), ndtr(v2)
    return v1, v1 * v2


def _mean_functions(spec: DgpSpec, x: np.ndarray, w: np.ndarray):
    """Return (m0, m1, sigma0, sigma1) evaluated per unit."""
    one = np.ones_like(x)
    if spec.family == "s51":
        if spec.model_id == 1:
            m = x - 0.5
            return m, m, one, one
        m1 = 10.0 * (x**2 - 1.0 / 3.0)
        sig = one if spec.model_id == 2 else x**2
        return np.zeros_like(x), m1, sig, sig
    if spec.model_id == 1:
        m = spec.gamma * (w - 0.5)
        return m, m, one, one
    if spec.model_id == 2:
        m = np.exp(spec.gamma * (w - 0.5))
        return m, m, one, one
    g1, g2, g3 = spec.gammas
    m0 = g1 * (w - spec.rho) + g2 * (ndtr(w) - 0.5) + g3 * (x**2 - 1.0)
    m1 = m0 + (ndtr(x) - 0.5) if spec.model_id == 4 else m0
    return m0, m1, one, one


def _takeup_index(spec: DgpSpec, x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if spec.family == "s51":
        base = 0.2 * x
        return base, 0.5 + base
    base = 0.2 * x + 0.2 * w * x
    return base, 0.75 + base


def potential_from_uniforms(spec: DgpSpec, u: np.ndarray) -> PotentialData:
    """Map an ``(m, 6)`` block of uniforms to potential data for ``m`` units."""
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[1] != N_UNIFORMS:
        raise ValueError(f"need an (m, {N_UNIFORMS}) array of uniforms")
    x, w = _covariates(spec, u)
    m0, m1, s0, s1 = _mean_functions(spec, x, w)
    y0 = m0 + s0 * _normal(u[:, 2])
    y1 = spec.mu1 + m1 + s1 * _normal(u[:, 3])
    idx0, idx1 = _takeup_index(spec, x, w)
    d0 = (idx0 > u[:, 4]).astype(float)
    # always-takers stay treated; monotone by construction
    d1 = np.where(d0 == 1.0, 1.0, (idx1 > u[:, 5]).astype(float))
    return PotentialData(y1=y1, y0=y0, d1=d1, d0=d0, x=x[:, None], w=w[:, None])


def generate(spec: DgpSpec, n_units: int, seed: int | np.random.Generator) -> PotentialData:
    """Draw ``n_units`` i.i.d. units; ``seed`` may be an int or a Generator."""
    if n_units < 1:
        raise ValueError("n_units must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(int(seed))
    return potential_from_uniforms(spec, rng.random((n_units, N_UNIFORMS)))


@dataclass(frozen=True)
class OracleResult:
    value: float
    mc_se: float
    n_draws: int
    n_compliers: int


@functools.lru_cache(maxsize=64)
def delta0_oracle(spec: DgpSpec, n_draws: int = 10**7, seed: int = 20240101,
                  chunk: int = 10**6) -> OracleResult:
    """Monte Carlo LATE: mean of ``Y(1) - Y(0)`` over compliers in a large draw.

    Draws are processed in chunks to bound memory. The reported standard
    error is that of a ratio of means over the complier subsample.
    """
    total = 0.0
    total_sq = 0.0
    count = 0
    done = 0
    k = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        pot = generate(spec, m, make_rng(int(seed), k))
        c = pot.complier
        diff = pot.y1[c] - pot.y0[c]
        total += float(diff.sum())
        total_sq += float(np.sum(diff**2))
        count += int(c.sum())
        done += m
        k += 1
    if count == 0:
        raise RuntimeError("no compliers drawn; the LATE is not identified for this spec")
    mean = total / count
    var = max(total_sq / count - mean**2, 0.0)
    return OracleResult(mean, math.sqrt(var / count), n_draws, count)


def limiting_variances(spec: DgpSpec, n_grid: int = 400, draws_per_point: int = 5000,
                       seed: int = 7) -> dict[str, float]:
    """Population limits of the variance estimators by conditional simulation.

    The matching covariate is held at ``n_grid`` quantile points; at each
    point the remaining randomness is simulated ``draws_per_point`` times to
    get conditional means and variances of the transformed outcomes
    ``Y*(a) = Ytilde(a) - LATE * D(a)``. Averaging over the grid integrates
    out the covariate. Returns the LATE, complier share and the limits of
    the consistent, conventional and pair-effect HC1 variances.
    """
    rng = make_rng(int(seed))
    ux = (np.arange(n_grid) + 0.5) / n_grid
    u = rng.random((n_grid, draws_per_point, N_UNIFORMS))
    u[:, :, 0] = ux[:, None]
    pot = potential_from_uniforms(spec, u.reshape(-1, N_UNIFORMS))
    shape = (n_grid, draws_per_point)
    c = pot.complier.reshape(shape)
    p_c = float(c.mean())
    late = float(((pot.y1 - pot.y0).reshape(shape) * c).sum() / c.sum())
    ystar = []
    for a in (0, 1):
        d = pot.d1 if a else pot.d0
        ystar.append((pot.itt_outcome(a) - late * d).reshape(shape))
    cm = [y.mean(axis=1) for y in ystar]
    cv = [y.var(axis=1, ddof=1) for y in ystar]
    e_cv = cv[0].mean() + cv[1].mean()
    dev = (cm[1] - cm[1].mean()) - (cm[0] - cm[0].mean())
    nu = (e_cv + 0.5 * np.mean(dev**2)) / p_c**2
    total_var = np.var(ystar[0]) + np.var(ystar[1])
    omega = total_var / p_c**2
    pfe = (e_cv + np.mean((cm[1] - cm[0]) ** 2)) / p_c**2
    return {"late": late, "p_complier": p_c, "nu_sq": float(nu), "omega_sq": float(omega),
            "omega_pfe_hc1_sq": float(pfe)}
