"""Concurrent stochastic reachability games.

A game is stored densely: ``kernel[s, a, b, s']`` holds the probability of
moving to ``s'`` when P1 plays ``a`` and P2 plays ``b`` in ``s``. Which
(s, a, b) triples are defined is tracked by two per-state action masks, so a
restricted game (P1 missing some actions) is just the same kernel with a
narrower ``enabled1`` mask.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

PROB_TOL = 1e-9


class GameError(Exception):
    """Base class for game-model errors."""


class UndefinedTransitionError(GameError):
    """Raised when querying an (s, a, b) triple the kernel does not define."""


class ConfigError(GameError):
    """Raised for malformed configurations."""


@dataclass(eq=False)
class ConcurrentGame:
    """Two-player concurrent game with reachability objectives.

    Attributes:
        states: state labels, index ``i`` is state ``i``.
        actions1: P1 action names.
        actions2: P2 action names.
        kernel: array of shape (S, A1, A2, S).
        enabled1: bool array (S, A1); P1 actions defined at each state.
        enabled2: bool array (S, A2); P2 actions defined at each state.
        initial: initial state index.
        discount: discount factor in (0, 1].
        targets1: bool mask of P1's target states.
        targets2: bool mask of P2's target states.
    """

    states: tuple[str, ...]
    actions1: tuple[str, ...]
    actions2: tuple[str, ...]
    kernel: np.ndarray
    enabled1: np.ndarray
    enabled2: np.ndarray
    initial: int
    discount: float
    targets1: np.ndarray
    targets2: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.states = tuple(self.states)
        self.actions1 = tuple(self.actions1)
        self.actions2 = tuple(self.actions2)
        self.kernel = np.asarray(self.kernel, dtype=float)
        n, m1, m2 = len(self.states), len(self.actions1), len(self.actions2)
        if self.kernel.shape != (n, m1, m2, n):
            raise ConfigError(
                f"kernel shape {self.kernel.shape} does not match "
                f"({n}, {m1}, {m2}, {n})")
        self.enabled1 = np.asarray(self.enabled1, dtype=bool).reshape(n, m1)
        self.enabled2 = np.asarray(self.enabled2, dtype=bool).reshape(n, m2)
        self.targets1 = np.asarray(self.targets1, dtype=bool).reshape(n)
        self.targets2 = np.asarray(self.targets2, dtype=bool).reshape(n)
        self.initial = int(self.initial)
        self.discount = float(self.discount)
        for arr in (self.kernel, self.enabled1, self.enabled2,
                    self.targets1, self.targets2):
            arr.setflags(write=False)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions1(self) -> int:
        return len(self.actions1)

    @property
    def n_actions2(self) -> int:
        return len(self.actions2)

    def defined(self) -> np.ndarray:
        """Boolean (S, A1, A2) mask of defined transitions."""
        return self.enabled1[:, :, None] & self.enabled2[:, None, :]

    def support(self) -> np.ndarray:
        """Boolean (S, A1, A2, S) mask of positive-probability successors."""
        return (self.kernel > 0.0) & self.defined()[..., None]

    def action_index(self, player: int, name: str | int) -> int:
        if isinstance(name, (int, np.integer)):
            return int(name)
        names = self.actions1 if player == 1 else self.actions2
        try:
            return names.index(name)
        except ValueError:
            raise GameError(f"unknown action {name!r} for player {player}") from None

    def state_index(self, label: str | int) -> int:
        if isinstance(label, (int, np.integer)):
            return int(label)
        try:
            return self.states.index(label)
        except ValueError:
            raise GameError(f"unknown state {label!r}") from None

    def targets(self, player: int) -> np.ndarray:
        return self.targets1 if player == 1 else self.targets2

    def fingerprint(self) -> str:
        """Content hash of the game (git blob style sha1 over its JSON)."""
        return content_hash(json.dumps(game_to_dict(self), sort_keys=True).encode())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ConcurrentGame):
            return NotImplemented
        return (self.states == other.states
                and self.actions1 == other.actions1
                and self.actions2 == other.actions2
                and self.initial == other.initial
                and self.discount == other.discount
                and np.array_equal(self.kernel, other.kernel)
                and np.array_equal(self.enabled1, other.enabled1)
                and np.array_equal(self.enabled2, other.enabled2)
                and np.array_equal(self.targets1, other.targets1)
                and np.array_equal(self.targets2, other.targets2))


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    state: int | None = None
    action1: int | None = None
    action2: int | None = None


def validate_game(game: ConcurrentGame) -> list[Violation]:
    """Check the structural invariants of ``game``.

    Returns an empty list when the game is well formed. Never raises.
    """
    report: list[Violation] = []
    if not 0.0 < game.discount <= 1.0:
        report.append(Violation("discount", f"discount {game.discount} not in (0, 1]"))
    overlap = np.flatnonzero(game.targets1 & game.targets2)
    for s in overlap:
        report.append(Violation("targets", "state is a target of both players", int(s)))

    defined = game.defined()
    kernel = game.kernel
    sums = kernel.sum(axis=3)
    negative = (kernel < 0.0).any(axis=3)
    for s, a, b in zip(*np.nonzero(defined)):
        if negative[s, a, b]:
            report.append(Violation("negative", "negative probability",
                                    int(s), int(a), int(b)))
        if abs(sums[s, a, b] - 1.0) > PROB_TOL:
            report.append(Violation(
                "row-sum", f"outgoing probabilities sum to {sums[s, a, b]:.12g}",
                int(s), int(a), int(b)))
    stray = ~defined & (np.abs(kernel).sum(axis=3) > 0.0)
    for s, a, b in zip(*np.nonzero(stray)):
        report.append(Violation("undefined-mass", "mass on an undefined transition",
                                int(s), int(a), int(b)))
    for s in np.flatnonzero(~game.enabled1.any(axis=1)):
        report.append(Violation("dead-state", "no P1 action enabled", int(s)))
    for s in np.flatnonzero(~game.enabled2.any(axis=1)):
        report.append(Violation("dead-state", "no P2 action enabled", int(s)))

    for s in np.flatnonzero(game.targets1 | game.targets2):
        for a, b in zip(*np.nonzero(defined[s])):
            row = kernel[s, a, b]
            if abs(row[s] - 1.0) > PROB_TOL:
                report.append(Violation("not-absorbing", "target state is not absorbing",
                                        int(s), int(a), int(b)))
    return report


def successor_distribution(game: ConcurrentGame, s: int, a: int | str,
                           b: int | str) -> dict[int, float]:
    """Return P(. | s, (a, b)) as a sparse ``{state: prob}`` mapping."""
    a = game.action_index(1, a)
    b = game.action_index(2, b)
    if not (game.enabled1[s, a] and game.enabled2[s, b]):
        raise UndefinedTransitionError(
            f"transition undefined for state {s}, actions "
            f"({game.actions1[a]}, {game.actions2[b]})")
    row = game.kernel[s, a, b]
    nz = np.flatnonzero(row)
    return {int(t): float(row[t]) for t in nz}


def sample_transition(game: ConcurrentGame, s: int, a: int | str, b: int | str,
                      rng_seed: int | np.random.Generator | None = None) -> int:
    """Draw a successor state; deterministic for a given integer seed."""
    dist = successor_distribution(game, s, a, b)
    rng = np.random.default_rng(rng_seed)
    targets = np.fromiter(dist.keys(), dtype=int)
    probs = np.fromiter(dist.values(), dtype=float)
    idx = np.searchsorted(np.cumsum(probs), rng.random() * probs.sum(), side="right")
    return int(targets[min(idx, len(targets) - 1)])


@dataclass
class Play:
    """Finite play prefix s0 (a0,b0) s1 (a1,b1) ... sn."""

    states: list[int]
    actions1: list[int] = field(default_factory=list)
    actions2: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.actions1) != len(self.actions2) or \
                len(self.states) != len(self.actions1) + 1:
            raise GameError("play must alternate states and joint actions")

    def __len__(self) -> int:
        return len(self.actions1)

    @property
    def last(self) -> int:
        return self.states[-1]

    def extend(self, a: int, b: int, s_next: int) -> None:
        self.actions1.append(int(a))
        self.actions2.append(int(b))
        self.states.append(int(s_next))

    def prefix(self, i: int) -> Play:
        return Play(self.states[:i + 1], self.actions1[:i], self.actions2[:i])

    def is_consistent(self, game: ConcurrentGame) -> bool:
        for i in range(len(self)):
            s, a, b, t = self.states[i], self.actions1[i], self.actions2[i], self.states[i + 1]
            if not (game.enabled1[s, a] and game.enabled2[s, b]):
                return False
            if game.kernel[s, a, b, t] <= 0.0:
                return False
        return True


# -- serialization ---------------------------------------------------------

FORMAT = "concurrent-game/1"


def content_hash(data: bytes) -> str:
    header = f"blob {len(data)}\0".encode()
    return hashlib.sha1(header + data).hexdigest()


def game_to_dict(game: ConcurrentGame) -> dict[str, Any]:
    rows = []
    defined = game.defined()
    for s, a, b in zip(*np.nonzero(defined)):
        row = game.kernel[s, a, b]
        nxt = [[int(t), repr(float(row[t]))] for t in np.flatnonzero(row)]
        rows.append([int(s), int(a), int(b), nxt])
    out = {
        "format": FORMAT,
        "states": list(game.states),
        "actions1": list(game.actions1),
        "actions2": list(game.actions2),
        "initial": game.initial,
        "discount": repr(game.discount),
        "targets1": np.flatnonzero(game.targets1).tolist(),
        "targets2": np.flatnonzero(game.targets2).tolist(),
        "enabled1": [np.flatnonzero(r).tolist() for r in game.enabled1],
        "enabled2": [np.flatnonzero(r).tolist() for r in game.enabled2],
        "kernel": rows,
    }
    if game.meta:
        out["meta"] = game.meta
    return out


def game_from_dict(data: dict[str, Any]) -> ConcurrentGame:
    if "grid" in data:
        from .soccer import GridConfig, build_soccer_game
        cfg = GridConfig.from_dict(data["grid"])
        game, _ = build_soccer_game(cfg, discount=float(data.get("discount", 0.95)))
        return game
    if data.get("format", FORMAT) != FORMAT:
        raise ConfigError(f"unsupported game format {data.get('format')!r}")
    states = data["states"]
    a1, a2 = data["actions1"], data["actions2"]
    n = len(states)
    kernel = np.zeros((n, len(a1), len(a2), n))
    en1 = np.zeros((n, len(a1)), dtype=bool)
    en2 = np.zeros((n, len(a2)), dtype=bool)
    for s, a, b, nxt in data["kernel"]:
        for t, p in nxt:
            kernel[s, a, b, t] = float(p)
        en1[s, a] = True
        en2[s, b] = True
    if "enabled1" in data:
        en1[:] = False
        for s, acts in enumerate(data["enabled1"]):
            en1[s, acts] = True
    if "enabled2" in data:
        en2[:] = False
        for s, acts in enumerate(data["enabled2"]):
            en2[s, acts] = True
    t1 = np.zeros(n, dtype=bool)
    t1[data.get("targets1", [])] = True
    t2 = np.zeros(n, dtype=bool)
    t2[data.get("targets2", [])] = True
    return ConcurrentGame(states, a1, a2, kernel, en1, en2,
                          int(data.get("initial", 0)), float(data.get("discount", 1.0)),
                          t1, t2, meta=dict(data.get("meta", {})))


def save_game(game: ConcurrentGame, path) -> None:
    with open(path, "w") as fh:
        json.dump(game_to_dict(game), fh, indent=1)


def load_game(path) -> ConcurrentGame:
    with open(path) as fh:
        return game_from_dict(json.load(fh))


def make_game(states: Sequence[str], actions1: Sequence[str], actions2: Sequence[str],
              transitions: dict[tuple[int, int, int], dict[int, float]], *,
              targets1: Sequence[int] = (), targets2: Sequence[int] = (),
              initial: int = 0, discount: float = 0.95,
              absorb_targets: bool = True) -> ConcurrentGame:
    """Build a game from a sparse transition dict.

    Target states get point-mass self loops for every joint action when
    ``absorb_targets`` is set, so small test games only need to list the
    interesting rows.
    """
    n, m1, m2 = len(states), len(actions1), len(actions2)
    kernel = np.zeros((n, m1, m2, n))
    en1 = np.zeros((n, m1), dtype=bool)
    en2 = np.zeros((n, m2), dtype=bool)
    t1 = np.zeros(n, dtype=bool)
    t1[list(targets1)] = True
    t2 = np.zeros(n, dtype=bool)
    t2[list(targets2)] = True
    if absorb_targets:
        for s in np.flatnonzero(t1 | t2):
            kernel[s, :, :, s] = 1.0
            en1[s] = True
            en2[s] = True
    for (s, a, b), dist in transitions.items():
        for t, p in dist.items():
            kernel[s, a, b, t] = p
        en1[s, a] = True
        en2[s, b] = True
    return ConcurrentGame(states, actions1, actions2, kernel, en1, en2,
                          initial, discount, t1, t2)
