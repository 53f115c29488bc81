"""Qualitative and quantitative solvers for concurrent reachability games.

* :func:`compute_asw` - almost-sure winning regions and memoryless
  randomized winning strategies (nested greatest/least fixpoint).
* :func:`solve_zero_sum` - Shapley value iteration for the zero-sum game
  with +1 / -1 rewards on entering P1's / P2's almost-sure winning region.
* :func:`evaluate_profile` - discounted utility of a fixed memoryless
  strategy profile.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .game import ConcurrentGame, ConfigError, GameError
from .matrix_game import NonConvergenceError, solve_matrix_games

__all__ = [
    "RegionSet", "MixedStrategy", "UtilityVector", "ZeroSumSolution",
    "compute_asw", "solve_zero_sum", "evaluate_profile", "check_asw_containment",
    "uniform_strategy", "RegionMismatchError", "UndefinedStrategyError",
]


class RegionMismatchError(GameError):
    pass


class UndefinedStrategyError(GameError):
    pass


@dataclass(eq=False)
class RegionSet:
    player: int
    members: np.ndarray
    game_tag: str = "true_game"

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=bool)

    def __contains__(self, s) -> bool:
        return bool(self.members[int(s)])

    def __len__(self) -> int:
        return int(self.members.sum())

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.members)

    def __eq__(self, other):
        if not isinstance(other, RegionSet):
            return NotImplemented
        return (self.player == other.player and self.game_tag == other.game_tag
                and np.array_equal(self.members, other.members))


@dataclass(eq=False)
class MixedStrategy:
    """Memoryless mixed strategy: one action distribution per state.

    Rows of states where the strategy is undefined are all zero and have
    ``defined[s] == False``.
    """

    player: int
    probs: np.ndarray
    defined: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        self.defined = np.asarray(self.defined, dtype=bool)

    def row(self, s: int) -> np.ndarray:
        if not self.defined[s]:
            raise UndefinedStrategyError(f"strategy {self.label!r} undefined at state {s}")
        return self.probs[s]

    def support(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.row(s) > 0.0)

    def __eq__(self, other):
        if not isinstance(other, MixedStrategy):
            return NotImplemented
        return (self.player == other.player and self.label == other.label
                and np.array_equal(self.defined, other.defined)
                and np.array_equal(self.probs, other.probs))


@dataclass
class UtilityVector:
    values: np.ndarray
    player: int
    profile: str = ""

    def __getitem__(self, s):
        return self.values[s]


@dataclass
class ZeroSumSolution:
    values: np.ndarray
    pi1: MixedStrategy
    pi2: MixedStrategy
    residuals: list[float] = field(default_factory=list)

    def __iter__(self):
        return iter((self.values, self.pi1, self.pi2))


def uniform_strategy(game: ConcurrentGame, player: int, label: str = "uniform") -> MixedStrategy:
    en = (game.enabled1 if player == 1 else game.enabled2).astype(float)
    counts = en.sum(axis=1, keepdims=True)
    probs = np.divide(en, counts, out=np.zeros_like(en), where=counts > 0)
    return MixedStrategy(player, probs, counts[:, 0] > 0, label)


def _own_view(game: ConcurrentGame, player: int):
    """Support array indexed (s, own action, opponent action, s')."""
    sup = game.support()
    if player == 1:
        return sup, game.enabled1, game.enabled2
    return sup.transpose(0, 2, 1, 3), game.enabled2, game.enabled1


def compute_asw(game: ConcurrentGame, player: int,
                game_tag: str = "true_game") -> tuple[RegionSet, MixedStrategy]:
    """Almost-sure winning region of ``player`` and a witnessing strategy.

    The outer loop shrinks a candidate set Y; the inner loop grows X from
    the targets, adding a state when some set of the player's actions keeps
    every outcome inside Y and, against each opponent action, reaches X
    with positive probability. Actions whose outcomes stay in Y for every
    opponent move are closed under union, so the largest such set is a
    witness whenever any subset is; it is used directly instead of
    enumerating all 2^|A| - 1 supports.

    The returned strategy is uniform over that largest safe set at each
    member state.
    """
    if player not in (1, 2):
        raise ValueError("player must be 1 or 2")
    sup, en_own, en_opp = _own_view(game, player)
    target = game.targets(player)
    n = game.n_states

    Y = np.ones(n, dtype=bool)
    while True:
        leaves = (sup & ~Y[None, None, None, :]).any(axis=3)
        unsafe = (leaves & en_opp[:, None, :]).any(axis=2)
        safe = en_own & ~unsafe & Y[:, None]
        has_safe = safe.any(axis=1)
        X = target & Y
        while True:
            hit = (sup & X[None, None, None, :]).any(axis=3)
            covered = (safe[:, :, None] & hit).any(axis=1) | ~en_opp
            progress = covered.all(axis=1) & has_safe & Y
            new_X = X | progress
            if np.array_equal(new_X, X):
                break
            X = new_X
        if np.array_equal(X, Y):
            break
        Y = X

    probs = np.zeros(en_own.shape)
    rows = safe & Y[:, None]
    counts = rows.sum(axis=1)
    ok = counts > 0
    probs[ok] = rows[ok] / counts[ok, None]
    strategy = MixedStrategy(player, probs, Y & ok, f"asw{player}:{game_tag}")
    return RegionSet(player, Y, game_tag), strategy


def check_asw_containment(asw_true: RegionSet, asw_perceptual: RegionSet) -> bool:
    """True iff P2's true-game region is contained in her perceived region."""
    if asw_true.members.shape != asw_perceptual.members.shape:
        raise RegionMismatchError("regions are over different state spaces")
    return bool(np.all(~asw_true.members | asw_perceptual.members))


def _stage_payoffs(game, values, reward, absorbing, gamma):
    cont = reward + np.where(absorbing, 0.0, values)
    return gamma * np.tensordot(game.kernel, cont, axes=([3], [0]))


def solve_zero_sum(game: ConcurrentGame, asw1: RegionSet, asw2: RegionSet,
                   gamma: float | None = None, tol: float = 1e-3, *,
                   max_iter: int = 100_000, stage_tol: float = 1e-7,
                   asw_strategies: tuple[MixedStrategy, MixedStrategy] | None = None,
                   ) -> ZeroSumSolution:
    """Shapley value iteration on the +1/-1 reachability game.

    Values are pinned to 0 inside ``asw1 | asw2``; entering ``asw1`` pays
    +1 and entering ``asw2`` pays -1, discounted once per step. Iterates
    until the sup-norm change between sweeps is at most ``tol``.

    Outside the regions the strategies are the stage-game optima at the
    final values. Inside a player's own region the ASW strategy is used if
    ``asw_strategies`` is given; every other undetermined row is uniform.
    """
    gamma = game.discount if gamma is None else float(gamma)
    if not 0.0 < gamma < 1.0:
        raise ConfigError("zero-sum value iteration needs a discount in (0, 1)")
    r1, r2 = asw1.members, asw2.members
    absorbing = r1 | r2
    reward = r1.astype(float) - r2.astype(float)
    active = np.flatnonzero(~absorbing)
    m1, m2 = game.enabled1[active], game.enabled2[active]

    V = np.zeros(game.n_states)
    residuals: list[float] = []
    for _ in range(max_iter):
        Q = _stage_payoffs(game, V, reward, absorbing, gamma)
        V_new = np.zeros_like(V)
        if active.size:
            V_new[active] = solve_matrix_games(Q[active], m1, m2, tol=stage_tol).values
        res = float(np.max(np.abs(V_new - V))) if V.size else 0.0
        residuals.append(res)
        V = V_new
        if res <= tol:
            break
    else:
        raise NonConvergenceError(
            f"Shapley iteration did not reach tol {tol} in {max_iter} sweeps")

    pi1 = uniform_strategy(game, 1, "ne1")
    pi2 = uniform_strategy(game, 2, "ne2")
    if active.size:
        Q = _stage_payoffs(game, V, reward, absorbing, gamma)
        sol = solve_matrix_games(Q[active], m1, m2, tol=stage_tol)
        pi1.probs[active] = sol.x
        pi2.probs[active] = sol.y
    if asw_strategies is not None:
        for pi, region, asw in ((pi1, r1, asw_strategies[0]), (pi2, r2, asw_strategies[1])):
            idx = np.flatnonzero(region & asw.defined)
            pi.probs[idx] = asw.probs[idx]
    return ZeroSumSolution(V, pi1, pi2, residuals)


def evaluate_profile(game: ConcurrentGame, pi1: MixedStrategy, pi2: MixedStrategy,
                     player: int, target_region: RegionSet, gamma: float | None = None,
                     tol: float = 1e-10, *, penalty_region: RegionSet | None = None,
                     max_iter: int = 1_000_000) -> UtilityVector:
    """Discounted utility of a memoryless profile.

    Reward 1 is paid on the first step that enters ``target_region`` and
    discounted by ``gamma`` per step, so a one-step entry is worth
    ``gamma``. Values inside the target region are 0. With
    ``penalty_region`` given, entering it pays -1 and also stops the
    process, which yields the zero-sum value of the profile.

    Strategies must be defined at every state outside the stopping regions.
    """
    gamma = game.discount if gamma is None else float(gamma)
    stop = target_region.members.copy()
    penalty = np.zeros_like(stop) if penalty_region is None else penalty_region.members
    stop |= penalty
    live = ~stop
    missing = live & ~(pi1.defined & pi2.defined)
    if missing.any():
        s = int(np.flatnonzero(missing)[0])
        raise UndefinedStrategyError(f"profile undefined at reachable state {s}")

    chain = np.einsum("sa,sb,sabt->st", pi1.probs, pi2.probs, game.kernel)
    chain[stop] = 0.0
    entry = chain[:, target_region.members].sum(axis=1) - chain[:, penalty].sum(axis=1)
    step = chain * live[None, :]
    r = gamma * entry
    if gamma < 1.0:
        u = np.linalg.solve(np.eye(game.n_states) - gamma * step, r)
    else:
        u = np.zeros(game.n_states)
        for _ in range(max_iter):
            u_new = r + step @ u
            if np.max(np.abs(u_new - u)) <= tol:
                u = u_new
                break
            u = u_new
        else:
            raise NonConvergenceError("profile evaluation did not converge")
    u[stop] = 0.0
    return UtilityVector(u, player, f"{pi1.label},{pi2.label}")
