import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hypergame_deception.matrix_game import (DimensionError, duality_gap, solve_matrix_game,
                                             solve_matrix_games)


def closed_form_2x2(M):
    """Value of a 2x2 game: pure saddle if one exists, else the mixed formula."""
    (a, b), (c, d) = M
    lower = max(min(a, b), min(c, d))
    upper = min(max(a, c), max(b, d))
    if lower == upper:
        return lower
    return (a * d - b * c) / (a + d - b - c)


def grid_value_2xk(M, steps=20001):
    """Brute force: scan P1's mixing weight on a fine grid."""
    p = np.linspace(0.0, 1.0, steps)
    payoff = np.outer(p, M[0]) + np.outer(1 - p, M[1])
    return payoff.min(axis=1).max()


def test_textbook_example():
    v, x, y = solve_matrix_game([[2, 0], [1, 3]])
    assert v == pytest.approx(1.5, abs=1e-9)
    assert x == pytest.approx([0.5, 0.5], abs=1e-9)
    assert y == pytest.approx([0.75, 0.25], abs=1e-9)


def test_matching_pennies():
    v, x, y = solve_matrix_game([[1, -1], [-1, 1]])
    assert v == pytest.approx(0.0, abs=1e-12)
    assert x == pytest.approx([0.5, 0.5])
    assert y == pytest.approx([0.5, 0.5])


def test_pure_saddle():
    v, x, y = solve_matrix_game([[3, 1, 4], [1, 0, 2]])
    assert v == 1.0
    assert x.tolist() == [1.0, 0.0] and y.tolist() == [0.0, 1.0, 0.0]


def test_rejects_bad_input():
    with pytest.raises(DimensionError):
        solve_matrix_game(np.zeros((0, 3)))
    with pytest.raises(DimensionError):
        solve_matrix_game([[np.nan, 1.0]])


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (2, 2), elements=st.floats(-10, 10)))
def test_2x2_matches_closed_form(M):
    v, x, y = solve_matrix_game(M)
    assert v == pytest.approx(closed_form_2x2(M), abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6).flatmap(
    lambda k: arrays(np.float64, (2, k), elements=st.floats(-5, 5))))
def test_2xk_matches_grid_search(M):
    v, _, _ = solve_matrix_game(M)
    assert v == pytest.approx(grid_value_2xk(M), abs=1e-3)


@settings(max_examples=100, deadline=None)
@given(st.tuples(st.integers(1, 5), st.integers(1, 5)).flatmap(
    lambda mk: arrays(np.float64, mk, elements=st.floats(-100, 100))))
def test_equilibrium_properties(M):
    v, x, y = solve_matrix_game(M)
    assert x.sum() == pytest.approx(1.0) and y.sum() == pytest.approx(1.0)
    assert (x >= 0).all() and (y >= 0).all()
    assert duality_gap(M, x, y) <= 1e-6 * max(1.0, np.abs(M).max())
    # value sits between the pure maxmin and minmax
    assert M.min(axis=1).max() - 1e-7 <= v <= M.max(axis=0).min() + 1e-7


def test_masked_actions_get_zero_probability():
    Q = np.array([[[0.0, 5.0], [2.0, 1.0], [9.0, 9.0]]])
    mask1 = np.array([[True, True, False]])
    sol = solve_matrix_games(Q, mask1)
    assert sol.x[0, 2] == 0.0
    v, _, _ = solve_matrix_game(Q[0, :2])
    assert sol.values[0] == pytest.approx(v)


def test_batch_equals_individual():
    rng = np.random.default_rng(0)
    Q = rng.normal(size=(40, 4, 3))
    sol = solve_matrix_games(Q)
    for g in range(40):
        assert sol.values[g] == pytest.approx(solve_matrix_game(Q[g])[0], abs=1e-9)
