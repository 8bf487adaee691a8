import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from veason.hungarian import hungarian


def brute_force(cost):
    """Minimum cost and lexicographically smallest optimal pair list."""
    cost = np.asarray(cost, float)
    n, m = cost.shape
    best = None
    if n <= m:
        for cols in itertools.permutations(range(m), n):
            pairs = tuple((i, c) for i, c in enumerate(cols))
            total = sum(cost[i, j] for i, j in pairs)
            if best is None or total < best[0] - 1e-12 or (abs(total - best[0]) <= 1e-12 and pairs < best[1]):
                best = (total, pairs)
    else:
        for rows in itertools.permutations(range(n), m):
            pairs = tuple(sorted((r, j) for j, r in enumerate(rows)))
            total = sum(cost[i, j] for i, j in pairs)
            if best is None or total < best[0] - 1e-12 or (abs(total - best[0]) <= 1e-12 and pairs < best[1]):
                best = (total, pairs)
    return best


def test_examples():
    a = hungarian([[0.2, 0.9], [0.8, 0.3]])
    assert a.matched_pairs == ((0, 0), (1, 1))
    assert a.total_cost == pytest.approx(0.5, abs=1e-15)
    assert hungarian([[0.4]]).matched_pairs == ((0, 0),)


def test_empty_and_invalid():
    assert hungarian(np.zeros((0, 3))).matched_pairs == ()
    assert hungarian(np.zeros((2, 0))).matched_pairs == ()
    with pytest.raises(ValueError):
        hungarian([[1.0, float("nan")]])
    with pytest.raises(ValueError):
        hungarian([1.0, 2.0])


def test_rectangular_matches_brute_force(rng):
    for _ in range(200):
        n, m = (int(x) for x in rng.integers(1, 6, size=2))
        cost = rng.random((n, m))
        a = hungarian(cost)
        total, pairs = brute_force(cost)
        assert len(a.matched_pairs) == min(n, m)
        assert a.total_cost == pytest.approx(total, abs=1e-12)
        assert a.matched_pairs == pairs


def test_ties_pick_lexicographically_smallest():
    assert hungarian(np.ones((3, 3))).matched_pairs == ((0, 0), (1, 1), (2, 2))
    assert hungarian([[0, 0], [0, 0], [0, 0]]).matched_pairs == ((0, 0), (1, 1))
    assert hungarian([[1, 0, 0], [0, 1, 1]]).matched_pairs == ((0, 1), (1, 0))


@settings(max_examples=150)
@given(st.integers(1, 4), st.integers(1, 4), st.data())
def test_integer_costs_with_ties(n, m, data):
    vals = data.draw(st.lists(st.integers(0, 3), min_size=n * m, max_size=n * m))
    cost = np.array(vals, float).reshape(n, m)
    total, pairs = brute_force(cost)
    a = hungarian(cost)
    assert a.total_cost == total
    assert a.matched_pairs == pairs
