from __future__ import annotations

import numpy as np
import pytest

from mpiv import (
    ObservedSample,
    PairStructure,
    WorkingModels,
    adjusted_estimate,
    fit_linear_working_models,
    nu_hat_sq,
    nu_hat_sq_adj,
    omega_hat_sq,
    omega_pfe,
    wald_estimate,
)
from mpiv.variance import UnbalancedPairError, nu_from_outcomes

from conftest import random_instance


def _nu_oracle(sample, structure):
    """Loop-based transcription of the consistent variance formula."""
    n = structure.n_pairs
    y, d, a = sample.y, sample.d, sample.a
    psi1 = sum(y[i] for i in range(2 * n) if a[i] == 1) / n
    psi0 = sum(y[i] for i in range(2 * n) if a[i] == 0) / n
    phi1 = sum(d[i] for i in range(2 * n) if a[i] == 1) / n
    phi0 = sum(d[i] for i in range(2 * n) if a[i] == 0) / n
    delta = (psi1 - psi0) / (phi1 - phi0)
    yh = [y[i] - delta * d[i] for i in range(2 * n)]
    order = [tuple(structure.pairs[k]) for k in structure.pair_order]
    tau = sum((yh[i] - yh[j]) ** 2 for i, j in order) / n
    lam = 0.0
    for b in range(n // 2):
        (i1, j1), (i2, j2) = order[2 * b], order[2 * b + 1]
        lam += (yh[i1] - yh[j1]) * (a[i1] - a[j1]) * (yh[i2] - yh[j2]) * (a[i2] - a[j2])
    lam *= 2.0 / n
    gam = (sum(yh[i] for i in range(2 * n) if a[i] == 1)
           - sum(yh[i] for i in range(2 * n) if a[i] == 0)) / n
    return max((tau - 0.5 * (lam + gam**2)) / (phi1 - phi0) ** 2, 0.0), gam


def test_micro_example(micro):
    sample, s = micro
    value, comps = nu_hat_sq(sample, s)
    assert value == 0.0 and comps.tau_sq == 0.0 and comps.lambda_ == 0.0
    assert omega_pfe(sample, s, "HC0") == 0.0
    assert omega_pfe(sample, s, "HC1") == 0.0


def test_nu_matches_loop_oracle(rng):
    for _ in range(50):
        sample, s = random_instance(rng, int(rng.integers(2, 25)))
        value, comps = nu_hat_sq(sample, s)
        expected, gam = _nu_oracle(sample, s)
        assert value == pytest.approx(expected, rel=1e-10, abs=1e-12)
        # the arm difference of transformed outcomes vanishes at the Wald estimate
        assert abs(comps.gamma) < 1e-10 and abs(gam) < 1e-10


def test_lambda_hand_example():
    yhat = np.array([3.0, 1.0, 0.0, 2.0, 5.0, 5.0])
    a = np.array([1.0, 0.0, 0.0, 1.0, 1.0, 0.0])
    s = PairStructure([[0, 1], [2, 3], [4, 5]], [0, 1, 2])
    comps = nu_from_outcomes(yhat, a, s, 1.0)
    # signed differences: 2, 2, 0; one block (pairs 0 and 1); odd pair unused
    assert comps.lambda_ == pytest.approx(2.0 / 3 * 4.0)
    assert comps.tau_sq == pytest.approx((4 + 4 + 0) / 3)
    assert comps.gamma == pytest.approx((3 + 2 + 5 - 1 - 0 - 5) / 3)


def test_nu_swap_invariance(rng):
    sample, s = random_instance(rng, 12)
    base = nu_hat_sq(sample, s)[0]
    within = PairStructure(s.pairs[:, ::-1], s.pair_order)
    order = s.pair_order.reshape(-1, 2)
    across = PairStructure(s.pairs, order[:, ::-1].ravel())
    blocks = PairStructure(s.pairs, order[::-1].ravel())
    for alt in (within, across, blocks):
        assert nu_hat_sq(sample, alt)[0] == pytest.approx(base, rel=1e-12)


def test_omega_closed_form_matches_sandwich(rng):
    for _ in range(30):
        sample, _ = random_instance(rng, int(rng.integers(3, 40)))
        assert omega_hat_sq(sample) == pytest.approx(omega_hat_sq(sample, "sandwich"), rel=1e-8)


def test_omega_micro_value(micro):
    sample, _ = micro
    # U = (-1/2, -1/2, 1/2, 1/2); (1/2) / (1/2)^2
    assert omega_hat_sq(sample) == pytest.approx(2.0)


def test_pfe_closed_form_matches_sandwich(rng):
    for _ in range(30):
        sample, s = random_instance(rng, int(rng.integers(3, 40)))
        for corr in ("HC0", "HC1"):
            assert omega_pfe(sample, s, corr) == pytest.approx(
                omega_pfe(sample, s, corr, method="sandwich"), rel=1e-8)


def test_hc1_scaling_exact(rng):
    sample, s = random_instance(rng, 9)
    n = s.n_pairs
    assert omega_pfe(sample, s, "HC1") == omega_pfe(sample, s, "HC0") * 2 * n / (n - 1)


def test_unbalanced_pairs_listed():
    s = PairStructure([[0, 1], [2, 3], [4, 5]], [0, 1, 2])
    sample = ObservedSample(y=np.arange(6.0), d=[1, 0, 1, 0, 0, 1], a=[1, 1, 1, 0, 0, 0],
                            x=np.zeros((6, 1)), w=np.zeros((6, 0)))
    with pytest.raises(UnbalancedPairError) as err:
        omega_pfe(sample, s)
    assert err.value.bad_pairs.tolist() == [0, 2]


def test_adjusted_nu_with_zero_models_equals_nu(rng):
    for _ in range(30):
        sample, s = random_instance(rng, int(rng.integers(2, 30)))
        zero = WorkingModels.zeros(sample.n_units)
        delta, cells = adjusted_estimate(sample, zero)
        adj = nu_hat_sq_adj(sample, s, delta, zero, cells)[0]
        assert adj == pytest.approx(nu_hat_sq(sample, s)[0], rel=1e-12, abs=1e-14)


def test_adjusted_nu_gamma_vanishes_for_linear_models(rng):
    sample, s = random_instance(rng, 20, k_w=2)
    models = fit_linear_working_models(sample, s)
    delta, cells = adjusted_estimate(sample, models)
    _, comps = nu_hat_sq_adj(sample, s, delta, models, cells)
    assert abs(comps.gamma) < 1e-10


def test_nu_consistent_for_analytic_limit():
    # Model with homogeneous conditional means: the limit is 2 / P(complier)^2.
    from mpiv.simulation import DgpSpec, run_mc

    res = run_mc(DgpSpec("s51", 1), 1600, 150, ["nu"], delta_null=0.0, delta_true=0.0, seed=11)
    p_c = 0.5 + 0.05 - 0.04 / 3
    target = 2.0 / p_c**2
    s = res.summaries["nu"]
    assert abs(s.mean_variance - target) < 0.05 * target


def test_wald_pair_invariance_of_scale(rng):
    sample, s = random_instance(rng, 10)
    scaled = ObservedSample(3 * sample.y, sample.d, sample.a, sample.x, sample.w)
    assert nu_hat_sq(scaled, s)[0] == pytest.approx(9 * nu_hat_sq(sample, s)[0], rel=1e-10)
    assert wald_estimate(scaled)[0] == pytest.approx(3 * wald_estimate(sample)[0], rel=1e-12)
