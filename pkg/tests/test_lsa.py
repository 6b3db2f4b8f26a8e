import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from algodisc.qap.lsa import lsa, lsa_cost

PERMS = {n: np.array(list(itertools.permutations(range(n)))) for n in range(1, 8)}


def exhaustive(cost):
    n = cost.shape[0]
    P = PERMS[n]
    totals = cost[np.arange(n), P].sum(1)
    best = totals.min()
    return best, P[totals == best]


def test_unique_zero_assignment():
    sigma = np.array([3, 0, 4, 1, 2])
    cost = np.ones((5, 5))
    cost[np.arange(5), sigma] = 0
    np.testing.assert_array_equal(lsa(cost), sigma)


def test_all_ones_gives_identity():
    np.testing.assert_array_equal(lsa(np.ones((6, 6))), np.arange(6))


def test_ties_break_to_lexicographically_smallest(rng):
    for _ in range(100):
        n = int(rng.integers(2, 7))
        cost = rng.integers(0, 3, size=(n, n)).astype(float)
        _, optimal = exhaustive(cost)
        smallest = min(map(tuple, optimal))
        assert tuple(lsa(cost)) == smallest


def test_cost_matches_exhaustive_minimum_n7(rng):
    for _ in range(200):
        cost = rng.normal(size=(7, 7))
        best, _ = exhaustive(cost)
        assert lsa_cost(cost) == pytest.approx(best, abs=1e-12)


def test_large_offsets_do_not_disturb_optimality(rng):
    cost = rng.integers(0, 100, size=(6, 6)).astype(float)
    best, optimal = exhaustive(cost)
    shifted = cost + 1e9
    assert tuple(lsa(shifted)) == min(map(tuple, optimal))


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        lsa(np.array([[0.0, np.inf], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        lsa(np.zeros((2, 3)))


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.just(1)).map(lambda s: (s[0], s[0])),
              elements=st.integers(-20, 20).map(float)))
def test_result_is_an_optimal_permutation(cost):
    perm = lsa(cost)
    n = cost.shape[0]
    assert sorted(perm.tolist()) == list(range(n))
    best, _ = exhaustive(cost)
    assert cost[np.arange(n), perm].sum() == best
