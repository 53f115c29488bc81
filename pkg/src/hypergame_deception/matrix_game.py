"""Zero-sum matrix games solved by linear programming.

The row player maximizes. Many small stage games (one per state of a
Markov game) are solved together as one block-diagonal LP: the objective
is a sum of independent maxima, so an optimum of the stacked program is an
optimum of every block. Column strategies are read off the LP duals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

SADDLE_TOL = 1e-12


class DimensionError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    pass


@dataclass
class MatrixSolution:
    values: np.ndarray  # (G,)
    x: np.ndarray  # (G, m) row strategies
    y: np.ndarray  # (G, k) column strategies


def duality_gap(M: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    """max_a (M y)_a - min_b (x^T M)_b for a single matrix."""
    M = np.asarray(M, dtype=float)
    return float(np.max(M @ y) - np.min(x @ M))


def solve_matrix_game(M, tol: float = 1e-9) -> tuple[float, np.ndarray, np.ndarray]:
    """Solve a zero-sum matrix game.

    Args:
        M: payoff matrix to the row player (maximizer).
        tol: acceptable duality gap.

    Returns:
        ``(value, x, y)`` with ``x`` the maximizer's and ``y`` the
        minimizer's optimal mixed strategies.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.size == 0:
        raise DimensionError(f"expected a non-empty matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise DimensionError("matrix entries must be finite")
    sol = solve_matrix_games(M[None], tol=tol)
    return float(sol.values[0]), sol.x[0], sol.y[0]


def solve_matrix_games(Q: np.ndarray, mask1: np.ndarray | None = None,
                       mask2: np.ndarray | None = None,
                       tol: float = 1e-9) -> MatrixSolution:
    """Solve a stack of matrix games ``Q[g]`` restricted to enabled actions.

    Masked-out rows get probability zero and masked-out columns are ignored.
    Raises ``NonConvergenceError`` if a returned pair has duality gap > tol.
    """
    Q = np.asarray(Q, dtype=float)
    G, m, k = Q.shape
    mask1 = np.ones((G, m), bool) if mask1 is None else np.asarray(mask1, bool)
    mask2 = np.ones((G, k), bool) if mask2 is None else np.asarray(mask2, bool)
    if G and (not mask1.any(axis=1).all() or not mask2.any(axis=1).all()):
        raise DimensionError("every game needs at least one action per player")

    values = np.empty(G)
    x = np.zeros((G, m))
    y = np.zeros((G, k))

    # pure saddle points need no LP
    big = np.inf
    row_min = np.where(mask2[:, None, :], Q, big).min(axis=2)
    row_min = np.where(mask1, row_min, -big)
    col_max = np.where(mask1[:, :, None], Q, -big).max(axis=1)
    col_max = np.where(mask2, col_max, big)
    lower = row_min.max(axis=1)
    upper = col_max.min(axis=1)
    saddle = (upper - lower) <= SADDLE_TOL
    gs = np.flatnonzero(saddle)
    if gs.size:
        ia = row_min[gs].argmax(axis=1)
        ib = col_max[gs].argmin(axis=1)
        x[gs, ia] = 1.0
        y[gs, ib] = 1.0
        values[gs] = lower[gs]

    rest = np.flatnonzero(~saddle)
    if rest.size:
        v, xr, yr = _solve_lp_block(Q[rest], mask1[rest], mask2[rest])
        values[rest] = v
        x[rest] = xr
        y[rest] = yr
        gaps = _gaps(Q[rest], mask1[rest], mask2[rest], xr, yr)
        bad = gaps > tol
        if bad.any():
            raise NonConvergenceError(
                f"duality gap {gaps.max():.3g} exceeds tol {tol:.3g} "
                f"on {int(bad.sum())} stage game(s)")
    return MatrixSolution(values, x, y)


def _gaps(Q, mask1, mask2, x, y):
    best_row = np.where(mask1, np.einsum("gab,gb->ga", Q, y), -np.inf).max(axis=1)
    best_col = np.where(mask2, np.einsum("ga,gab->gb", x, Q), np.inf).min(axis=1)
    return best_row - best_col


def _solve_lp_block(Q, mask1, mask2):
    G, m, k = Q.shape
    nv = m + 1  # x_0..x_{m-1}, v
    n_var = G * nv
    c = np.zeros(n_var)
    c[m::nv] = -1.0

    # v_g - sum_a Q[g,a,b] x_{g,a} <= 0 for enabled (g, b)
    gb = np.argwhere(mask2)
    n_ub = len(gb)
    rows = np.repeat(np.arange(n_ub), m + 1)
    g_of = np.repeat(gb[:, 0], m + 1)
    local = np.tile(np.arange(m + 1), n_ub)
    cols = g_of * nv + local
    coef = np.empty((n_ub, m + 1))
    coef[:, :m] = -Q[gb[:, 0], :, gb[:, 1]]
    coef[:, m] = 1.0
    A_ub = sparse.csr_matrix((coef.ravel(), (rows, cols)), shape=(n_ub, n_var))

    eq_rows = np.repeat(np.arange(G), m)
    eq_cols = (np.arange(G)[:, None] * nv + np.arange(m)[None, :]).ravel()
    A_eq = sparse.csr_matrix((np.ones(G * m), (eq_rows, eq_cols)), shape=(G, n_var))

    lo = np.zeros(n_var)
    hi = np.full(n_var, np.inf)
    hi_x = np.where(mask1, np.inf, 0.0)
    hi.reshape(G, nv)[:, :m] = hi_x
    lo[m::nv] = -np.inf
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(n_ub), A_eq=A_eq, b_eq=np.ones(G),
                  bounds=np.column_stack([lo, hi]), method="highs")
    if res.status != 0:
        raise NonConvergenceError(f"LP solver failed: {res.message}")
    sol = res.x.reshape(G, nv)
    x = np.clip(sol[:, :m], 0.0, None)
    x /= x.sum(axis=1, keepdims=True)
    y = np.zeros((G, k))
    y[gb[:, 0], gb[:, 1]] = np.clip(-res.ineqlin.marginals, 0.0, None)
    y /= y.sum(axis=1, keepdims=True)
    return sol[:, m], x, y
