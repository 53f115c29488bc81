"""Soccer gridworld builders.

Two players move concurrently on a grid; whoever holds the ball tries to
carry it to the opponent's end column. P1 additionally owns a hidden move
``aH`` which P2 does not know about.

Movement rules (shared by both variants):

* a move that would leave the grid or enter a wall / hidden cell leaves the
  player in place;
* if both players end in the same cell, or swap cells, the ball goes to P1
  with probability ``collision_ball_prob`` and to P2 otherwise;
* otherwise the ball stays with its holder.

In the ``basic`` variant ``aH`` moves P1 two cells down. In the ``bouncing``
variant it carries P1 across an adjacent hidden cell to the cell behind it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Any, Iterable

import numpy as np

from .game import ConcurrentGame, ConfigError

Cell = tuple[int, int]

MOVES1 = ("aU", "aD", "aL", "aR", "aH")
MOVES2 = ("aU", "aD", "aL", "aR")
HIDDEN = ("aH",)
_DELTA = {"aU": (-1, 0), "aD": (1, 0), "aL": (0, -1), "aR": (0, 1)}
# direction preference when several hidden cells are adjacent
_TRAVERSE_ORDER = ("aR", "aD", "aU", "aL")


@dataclass(frozen=True)
class SoccerState:
    p1: Cell
    p2: Cell
    ball: int  # 1 = P1 holds the ball

    def label(self) -> str:
        return f"p1={self.p1[0]},{self.p1[1]} p2={self.p2[0]},{self.p2[1]} ball={self.ball}"


@dataclass(frozen=True)
class GridConfig:
    rows: int = 3
    cols: int = 5
    walls: frozenset = field(default_factory=frozenset)
    hidden_cells: frozenset = field(default_factory=frozenset)
    collision_ball_prob: float = 0.5
    variant: str = "basic"
    start: SoccerState | None = None

    def __post_init__(self):
        object.__setattr__(self, "walls", frozenset(map(tuple, self.walls)))
        object.__setattr__(self, "hidden_cells", frozenset(map(tuple, self.hidden_cells)))
        if isinstance(self.start, dict):
            object.__setattr__(self, "start", SoccerState(
                tuple(self.start["p1"]), tuple(self.start["p2"]), int(self.start["ball"])))

    def check(self) -> None:
        if self.rows < 1 or self.cols < 2:
            raise ConfigError("grid needs at least one row and two columns")
        if self.variant not in ("basic", "bouncing"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if not 0.0 <= self.collision_ball_prob <= 1.0:
            raise ConfigError("collision_ball_prob must lie in [0, 1]")
        for r, c in self.walls | self.hidden_cells:
            if not (0 <= r < self.rows and 0 <= c < self.cols):
                raise ConfigError(f"cell {(r, c)} outside the {self.rows}x{self.cols} grid")
        if self.variant == "bouncing" and not self.hidden_cells:
            raise ConfigError("bouncing variant needs at least one hidden cell")

    def blocked(self, cell: Cell) -> bool:
        r, c = cell
        if not (0 <= r < self.rows and 0 <= c < self.cols):
            return True
        return cell in self.walls or cell in self.hidden_cells

    def free_cells(self) -> list[Cell]:
        return [(r, c) for r in range(self.rows) for c in range(self.cols)
                if not self.blocked((r, c))]

    def to_dict(self) -> dict[str, Any]:
        out = {
            "rows": self.rows, "cols": self.cols,
            "walls": sorted(map(list, self.walls)),
            "hidden_cells": sorted(map(list, self.hidden_cells)),
            "collision_ball_prob": self.collision_ball_prob,
            "variant": self.variant,
        }
        if self.start is not None:
            out["start"] = {"p1": list(self.start.p1), "p2": list(self.start.p2),
                            "ball": self.start.ball}
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> GridConfig:
        return cls(rows=int(data.get("rows", 3)), cols=int(data.get("cols", 5)),
                   walls=frozenset(tuple(c) for c in data.get("walls", [])),
                   hidden_cells=frozenset(tuple(c) for c in data.get("hidden_cells", [])),
                   collision_ball_prob=float(data.get("collision_ball_prob", 0.5)),
                   variant=data.get("variant", "basic"),
                   start=data.get("start"))


BASIC = GridConfig()

# Approximate layout of the bouncing-wall arena: the middle row is a wall
# strip, and the bottom corridor is closed at (2, 3) as far as P2 knows. P1
# can cross that cell with his hidden move and reach the goal column.
BOUNCING_APPROX = GridConfig(
    rows=3, cols=5,
    walls=frozenset({(1, 1), (1, 2), (1, 3)}),
    hidden_cells=frozenset({(2, 3)}),
    variant="bouncing",
    start=SoccerState((2, 0), (0, 4), 1),
)


class SoccerLayout:
    """Dense indexing of soccer states for a grid config."""

    def __init__(self, cfg: GridConfig):
        self.cfg = cfg
        self.cells = cfg.free_cells()
        self.cell_index = {c: i for i, c in enumerate(self.cells)}
        nc = len(self.cells)
        self.n_states = nc * nc * 2

    def encode(self, st: SoccerState) -> int:
        i1 = self.cell_index[tuple(st.p1)]
        i2 = self.cell_index[tuple(st.p2)]
        return (i1 * len(self.cells) + i2) * 2 + int(st.ball)

    def decode(self, s: int) -> SoccerState:
        nc = len(self.cells)
        ball = s % 2
        i2 = (s // 2) % nc
        i1 = s // (2 * nc)
        return SoccerState(self.cells[i1], self.cells[i2], ball)

    def states(self) -> Iterable[SoccerState]:
        for s in range(self.n_states):
            yield self.decode(s)


def _step(cfg: GridConfig, cell: Cell, move: str) -> Cell:
    if move == "aH":
        return _hidden_step(cfg, cell)
    dr, dc = _DELTA[move]
    nxt = (cell[0] + dr, cell[1] + dc)
    return cell if cfg.blocked(nxt) else nxt


def _hidden_step(cfg: GridConfig, cell: Cell) -> Cell:
    if cfg.variant == "basic":
        nxt = (cell[0] + 2, cell[1])
        return cell if cfg.blocked(nxt) else nxt
    for move in _TRAVERSE_ORDER:
        dr, dc = _DELTA[move]
        mid = (cell[0] + dr, cell[1] + dc)
        if mid not in cfg.hidden_cells:
            continue
        land = (cell[0] + 2 * dr, cell[1] + 2 * dc)
        if not cfg.blocked(land):
            return land
    return cell


def soccer_outcomes(cfg: GridConfig, st: SoccerState, m1: str,
                    m2: str) -> list[tuple[SoccerState, float]]:
    """Successor distribution of a non-terminal soccer state."""
    n1 = _step(cfg, st.p1, m1)
    n2 = _step(cfg, st.p2, m2)
    collide = n1 == n2 or (n1 == st.p2 and n2 == st.p1 and st.p1 != st.p2)
    if not collide:
        return [(SoccerState(n1, n2, st.ball), 1.0)]
    q = cfg.collision_ball_prob
    out = []
    if q > 0.0:
        out.append((SoccerState(n1, n2, 1), q))
    if q < 1.0:
        out.append((SoccerState(n1, n2, 0), 1.0 - q))
    return out


def is_p1_goal(cfg: GridConfig, st: SoccerState) -> bool:
    return st.ball == 1 and st.p1[1] == cfg.cols - 1


def is_p2_goal(cfg: GridConfig, st: SoccerState) -> bool:
    return st.ball == 0 and st.p2[1] == 0


def build_soccer_game(cfg: GridConfig = BASIC, discount: float = 0.95
                      ) -> tuple[ConcurrentGame, frozenset[str]]:
    """Build the true soccer game and return it with P1's hidden action set."""
    cfg.check()
    layout = SoccerLayout(cfg)
    n = layout.n_states
    kernel = np.zeros((n, len(MOVES1), len(MOVES2), n))
    t1 = np.zeros(n, dtype=bool)
    t2 = np.zeros(n, dtype=bool)
    labels = []
    for s, st in enumerate(layout.states()):
        labels.append(st.label())
        if is_p1_goal(cfg, st):
            t1[s] = True
        elif is_p2_goal(cfg, st):
            t2[s] = True
        if t1[s] or t2[s]:
            kernel[s, :, :, s] = 1.0
            continue
        for (i, m1), (j, m2) in product(enumerate(MOVES1), enumerate(MOVES2)):
            for nxt, p in soccer_outcomes(cfg, st, m1, m2):
                kernel[s, i, j, layout.encode(nxt)] += p
    start = cfg.start or SoccerState((1, 1), (1, cfg.cols - 2), 1)
    if cfg.blocked(start.p1) or cfg.blocked(start.p2):
        raise ConfigError("start position lies on a blocked cell")
    game = ConcurrentGame(
        labels, MOVES1, MOVES2, kernel,
        np.ones((n, len(MOVES1)), dtype=bool), np.ones((n, len(MOVES2)), dtype=bool),
        layout.encode(start), discount, t1, t2,
        meta={"grid": cfg.to_dict()})
    return game, frozenset(HIDDEN)


def layout_of(game: ConcurrentGame) -> SoccerLayout:
    """Recover the grid layout of a soccer-family game."""
    if "grid" not in game.meta:
        raise ConfigError("not a grid game")
    return SoccerLayout(GridConfig.from_dict(game.meta["grid"]))
