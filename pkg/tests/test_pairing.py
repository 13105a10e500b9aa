from __future__ import annotations

import itertools

import numpy as np
import pytest

from mpiv.pairing import (
    assign_treatment,
    make_rng,
    match_pairs_greedy,
    match_pairs_scalar,
    match_report,
)


def _all_pairings(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for k in range(len(rest)):
        for tail in _all_pairings(rest[:k] + rest[k + 1:]):
            yield [(first, rest[k])] + tail


def _cost(x, pairs):
    return float(sum((x[i] - x[j]) ** 2 for i, j in pairs))


def test_scalar_pairs_adjacent_sorted_units():
    x = np.array([0.9, 0.1, 0.5, 0.3, 0.7, 0.2])
    s = match_pairs_scalar(x)
    assert s.order_source == "sorted_x"
    np.testing.assert_array_equal(s.pairs, [[1, 5], [3, 2], [4, 0]])
    np.testing.assert_array_equal(s.pair_order, [0, 1, 2])


def test_scalar_ties_broken_by_row():
    s = match_pairs_scalar([1.0, 0.0, 1.0, 0.0])
    np.testing.assert_array_equal(s.pairs, [[1, 3], [0, 2]])


def test_scalar_minimizes_squared_distance():
    # Adjacent pairing of sorted values is optimal for the squared-distance objective.
    rng = np.random.default_rng(0)
    for _ in range(30):
        x = rng.normal(size=8)
        s = match_pairs_scalar(x)
        best = min(_cost(x, p) for p in _all_pairings(list(range(8))))
        assert _cost(x, s.pairs) == pytest.approx(best, rel=1e-12)
        assert _cost(x, s.pairs) <= _cost(x, match_pairs_greedy(x).pairs) + 1e-12


def test_greedy_is_not_always_the_sorted_pairing():
    x = np.array([1.0, 0.0, 1.1, 5.0])
    greedy = {frozenset(p) for p in match_pairs_greedy(x).pairs.tolist()}
    scalar = {frozenset(p) for p in match_pairs_scalar(x).pairs.tolist()}
    assert greedy == {frozenset({0, 2}), frozenset({1, 3})}
    assert scalar == {frozenset({1, 0}), frozenset({2, 3})}


def test_scalar_requires_one_column():
    with pytest.raises(ValueError, match="k_x = 1"):
        match_pairs_scalar(np.zeros((4, 2)))


@pytest.mark.parametrize("m", [2, 10, 14, 40])
def test_greedy_multivariate_valid(m):
    x = np.random.default_rng(m).normal(size=(m, 3))
    s = match_pairs_greedy(x)
    assert s.n_pairs == m // 2
    assert sorted(s.pairs.ravel().tolist()) == list(range(m))
    assert sorted(s.pair_order.tolist()) == list(range(m // 2))


def test_greedy_groups_close_pairs():
    # two well separated clusters of two pairs each
    x = np.array([[0.0], [0.1], [10.0], [10.1], [0.2], [0.3], [10.2], [10.3]])
    s = match_pairs_greedy(x)
    blocks = s.ordered_pairs.reshape(2, 4)
    for b in blocks:
        vals = x[b, 0]
        assert vals.max() - vals.min() < 1.0


def test_greedy_leftover_pair_last():
    x = np.array([0.0, 0.1, 0.2, 0.3, 50.0, 50.1])
    s = match_pairs_greedy(x)
    assert x[s.ordered_pairs[-1]].min() >= 50.0


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        match_pairs_scalar([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        match_pairs_greedy([1.0, np.nan])


def test_match_report_values():
    x = np.array([0.0, 1.0, 3.0, 5.0])
    s = match_pairs_scalar(x)
    r = match_report(x, s)
    assert r.within_pair_l2 == pytest.approx((1.5, 2.5))
    # cross distances between pair (0,1) and (3,5)
    assert r.cross_pair_l2_sq == pytest.approx((9.0, 25.0, 4.0, 16.0))
    d = r.as_dict()
    assert d["n_pairs"] == 2 and len(d["cross_pair_mean_l2_sq"]) == 4


def test_assign_one_treated_per_pair_and_deterministic():
    s = match_pairs_scalar(np.arange(20.0))
    a = assign_treatment(s, 7)
    assert np.all(a[s.pairs].sum(axis=1) == 1)
    np.testing.assert_array_equal(a, assign_treatment(s, 7))
    assert not np.array_equal(a, assign_treatment(s, 8))


def test_assignment_is_fair():
    s = match_pairs_scalar(np.arange(2000.0))
    a = assign_treatment(s, 1)
    share = a[s.pairs[:, 0]].mean()
    assert abs(share - 0.5) < 4 * np.sqrt(0.25 / 1000)


def test_rng_streams_independent_of_order():
    first = [make_rng(5, r).random() for r in range(4)]
    again = [make_rng(5, r).random() for r in reversed(range(4))][::-1]
    assert first == again
    assert len(set(first)) == 4


def test_all_pairings_helper_counts():
    assert sum(1 for _ in _all_pairings(list(range(6)))) == 15
    assert len(list(itertools.islice(_all_pairings(list(range(8))), 200))) == 105
