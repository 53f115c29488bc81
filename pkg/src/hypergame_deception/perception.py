"""P2's perceptual game, the level-2 hypergame, and P1's model of P2.

P2 does not know P1's hidden actions, so she reasons in a restricted copy of
the true game. :func:`build_hypergame` solves both games and keeps every
strategy and region the planner needs. :class:`BSRModel` is P1's model of
P2's behaviour over time: perceptual best response until she detects the
deviation, an unknown window while she learns the true game, then the
true-game best response.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .game import ConcurrentGame, GameError, Play
from .solvers import (MixedStrategy, RegionSet, UtilityVector, check_asw_containment,
                      compute_asw, evaluate_profile, solve_zero_sum, uniform_strategy)

log = logging.getLogger(__name__)


class DeadStateError(GameError):
    pass


class ContainmentError(AssertionError):
    """ASW2 not contained in the perceived ASW2: a solver bug."""


def _visible_indices(game: ConcurrentGame, visible: Iterable) -> list[int]:
    idx = sorted({game.action_index(1, a) for a in visible})
    if not idx:
        raise GameError("visible action set is empty")
    if idx[0] < 0 or idx[-1] >= game.n_actions1:
        raise GameError("visible action out of range")
    return idx


def derive_perceptual_game(game: ConcurrentGame, visible: Iterable) -> ConcurrentGame:
    """Restrict P1 to ``visible`` actions; other transitions become undefined."""
    idx = _visible_indices(game, visible)
    keep = np.zeros(game.n_actions1, dtype=bool)
    keep[idx] = True
    if keep.all():
        log.warning("visible set equals A1: deception is vacuous")
    enabled1 = game.enabled1 & keep[None, :]
    dead = np.flatnonzero(~enabled1.any(axis=1))
    if dead.size:
        raise DeadStateError(f"state {int(dead[0])} has no visible P1 action")
    kernel = np.where(enabled1[:, :, None, None], game.kernel, 0.0)
    meta = dict(game.meta)
    meta["visible1"] = [game.actions1[i] for i in np.flatnonzero(keep & game.enabled1.any(axis=0))]
    return ConcurrentGame(game.states, game.actions1, game.actions2, kernel, enabled1,
                          game.enabled2, game.initial, game.discount, game.targets1,
                          game.targets2, meta=meta)


@dataclass(eq=False)
class HypergameBundle:
    """Everything P1 knows about the hypergame.

    Strategy fields follow the usual pairing: ``pi1, pi2`` are the true-game
    equilibrium, ``pi1_p, pi2_p`` the perceptual-game equilibrium, and the
    ``*_asw`` fields the almost-sure winning strategies. The equilibrium
    strategies already use the ASW strategy inside the player's own region.

    ``u1`` / ``u2`` are the per-player discounted probabilities of entering
    their own region under the true equilibrium; ``eq_value`` is the
    zero-sum value of that profile (+1 / -1 on entering ASW1 / ASW2), which
    equals ``u1 - u2``.
    """

    game: ConcurrentGame
    perceptual: ConcurrentGame
    visible: tuple[int, ...]
    gamma: float
    asw1: RegionSet
    asw2: RegionSet
    asw1_p: RegionSet
    asw2_p: RegionSet
    pi1: MixedStrategy
    pi2: MixedStrategy
    pi1_p: MixedStrategy
    pi2_p: MixedStrategy
    pi1_asw: MixedStrategy
    pi2_asw: MixedStrategy
    pi1_p_asw: MixedStrategy
    pi2_p_asw: MixedStrategy
    u1: UtilityVector
    u2: UtilityVector
    eq_value: np.ndarray
    tol: float = 1e-3

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(a for a in range(self.game.n_actions1) if a not in self.visible)

    @property
    def decided(self) -> np.ndarray:
        """States inside either true-game ASW region."""
        return self.asw1.members | self.asw2.members

    def initial_states(self) -> np.ndarray:
        return np.flatnonzero(~self.decided)

    def __eq__(self, other):
        if not isinstance(other, HypergameBundle):
            return NotImplemented
        names = ("asw1", "asw2", "asw1_p", "asw2_p", "pi1", "pi2", "pi1_p", "pi2_p",
                 "pi1_asw", "pi2_asw", "pi1_p_asw", "pi2_p_asw")
        return (self.game == other.game and self.perceptual == other.perceptual
                and self.visible == other.visible and self.gamma == other.gamma
                and all(getattr(self, n) == getattr(other, n) for n in names)
                and np.array_equal(self.u1.values, other.u1.values)
                and np.array_equal(self.u2.values, other.u2.values)
                and np.array_equal(self.eq_value, other.eq_value))


def build_hypergame(game: ConcurrentGame, visible: Iterable, gamma: float | None = None,
                    tol: float = 1e-3) -> HypergameBundle:
    """Solve the true and perceptual games and bundle the results."""
    gamma = game.discount if gamma is None else float(gamma)
    vis = tuple(_visible_indices(game, visible))
    perceptual = derive_perceptual_game(game, vis)

    asw1, pi1_asw = compute_asw(game, 1, "true_game")
    asw2, pi2_asw = compute_asw(game, 2, "true_game")
    asw1_p, pi1_p_asw = compute_asw(perceptual, 1, "perceptual")
    asw2_p, pi2_p_asw = compute_asw(perceptual, 2, "perceptual")
    if not check_asw_containment(asw2, asw2_p):
        raise ContainmentError("ASW2 is not contained in the perceived ASW2")

    ne = solve_zero_sum(game, asw1, asw2, gamma, tol, asw_strategies=(pi1_asw, pi2_asw))
    ne_p = solve_zero_sum(perceptual, asw1_p, asw2_p, gamma, tol,
                          asw_strategies=(pi1_p_asw, pi2_p_asw))
    pi1, pi2 = ne.pi1, ne.pi2
    pi1.label, pi2.label = "pi1", "pi2"
    pi1_p, pi2_p = ne_p.pi1, ne_p.pi2
    pi1_p.label, pi2_p.label = "pi1_p", "pi2_p"

    u1 = evaluate_profile(game, pi1, pi2, 1, asw1, gamma)
    u2 = evaluate_profile(game, pi1, pi2, 2, asw2, gamma)
    value = evaluate_profile(game, pi1, pi2, 1, asw1, gamma, penalty_region=asw2)
    return HypergameBundle(game, perceptual, vis, gamma, asw1, asw2, asw1_p, asw2_p,
                           pi1, pi2, pi1_p, pi2_p, pi1_asw, pi2_asw, pi1_p_asw, pi2_p_asw,
                           u1, u2, value.values, tol)


# -- P1's model of P2 ------------------------------------------------------

class _Undefined:
    """Marker for the window in which P2's behaviour is unknown."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "UNDEFINED"

    def __bool__(self):
        return False


UNDEFINED = _Undefined()

PERCEPTUAL, WINDOW, TRUE = "perceptual", "undefined", "true"


@dataclass(frozen=True)
class DeceptionTimeline:
    """Switch step ``t``, detection delay ``k1`` and learning delay ``k2``.

    ``t`` or ``k1`` may be ``None`` while the event has not happened yet.
    """

    t: int | None = None
    k1: int | None = None
    k2: int = 0

    def __post_init__(self):
        for name in ("t", "k1", "k2"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def detection_step(self) -> int | None:
        if self.t is None or self.k1 is None:
            return None
        return self.t + self.k1

    def phase(self, i: int) -> str:
        d = self.detection_step
        if d is None or i <= d:
            return PERCEPTUAL
        if i <= d + self.k2:
            return WINDOW
        return TRUE


def perceptual_p2(bundle: HypergameBundle) -> np.ndarray:
    """P2's perceptual strategy with the ASW2-perceived case split applied."""
    probs = bundle.pi2_p.probs.copy()
    inside = bundle.asw2_p.members & bundle.pi2_p_asw.defined
    probs[inside] = bundle.pi2_p_asw.probs[inside]
    return probs


def true_p2(bundle: HypergameBundle) -> np.ndarray:
    probs = bundle.pi2.probs.copy()
    inside = bundle.asw2.members & bundle.pi2_asw.defined
    probs[inside] = bundle.pi2_asw.probs[inside]
    return probs


def perceptual_p1(bundle: HypergameBundle) -> np.ndarray:
    probs = bundle.pi1_p.probs.copy()
    inside = bundle.asw1_p.members & bundle.pi1_p_asw.defined
    probs[inside] = bundle.pi1_p_asw.probs[inside]
    return probs


def true_p1(bundle: HypergameBundle) -> np.ndarray:
    probs = bundle.pi1.probs.copy()
    inside = bundle.asw1.members & bundle.pi1_asw.defined
    probs[inside] = bundle.pi1_asw.probs[inside]
    return probs


@dataclass(frozen=True)
class BSRModel:
    bundle: HypergameBundle
    timeline: DeceptionTimeline = DeceptionTimeline()

    def phase(self, i: int) -> str:
        return self.timeline.phase(i)

    def with_timeline(self, **changes) -> BSRModel:
        return replace(self, timeline=replace(self.timeline, **changes))


def bsr_action(model: BSRModel, history: Play):
    """P2's predicted action distribution after ``history``, or ``UNDEFINED``."""
    i = len(history)
    s = history.last
    phase = model.phase(i)
    if phase == WINDOW:
        return UNDEFINED
    b = model.bundle
    if phase == PERCEPTUAL:
        if s in b.asw2_p:
            return b.pi2_p_asw.row(s)
        return b.pi2_p.row(s)
    if s in b.asw2:
        return b.pi2_asw.row(s)
    return b.pi2.row(s)


@dataclass(frozen=True)
class Fill:
    """How a completion fills the undefined window."""

    kind: str
    strategy: MixedStrategy | None = field(default=None, compare=False)

    KINDS = ("keep_perceptual", "uniform_random", "fixed_strategy")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown fill policy {self.kind!r}")
        if self.kind == "fixed_strategy" and self.strategy is None:
            raise ValueError("fixed_strategy needs a strategy")

    @classmethod
    def keep_perceptual(cls) -> Fill:
        return cls("keep_perceptual")

    @classmethod
    def uniform_random(cls) -> Fill:
        return cls("uniform_random")

    @classmethod
    def fixed(cls, strategy: MixedStrategy) -> Fill:
        return cls("fixed_strategy", strategy)

    @property
    def name(self) -> str:
        if self.kind == "fixed_strategy":
            return f"fixed({self.strategy.label})"
        return self.kind


def adversarial_menu(bundle: HypergameBundle) -> list[Fill]:
    """Default completions used for worst-case estimates."""
    return [Fill.keep_perceptual(), Fill.uniform_random(), Fill.fixed(bundle.pi2)]


@dataclass(frozen=True)
class BSRCompletion:
    model: BSRModel
    fill: Fill

    def window_table(self) -> np.ndarray:
        b = self.model.bundle
        if self.fill.kind == "keep_perceptual":
            return perceptual_p2(b)
        if self.fill.kind == "uniform_random":
            return uniform_strategy(b.game, 2).probs
        return self.fill.strategy.probs

    def phase_tables(self) -> dict[str, np.ndarray]:
        """(S, A2) action tables for each phase, used by the simulator."""
        b = self.model.bundle
        return {PERCEPTUAL: perceptual_p2(b), WINDOW: self.window_table(), TRUE: true_p2(b)}

    def __call__(self, history: Play) -> np.ndarray:
        dist = bsr_action(self.model, history)
        if dist is UNDEFINED:
            return self.window_table()[history.last]
        return dist


def complete_bsr(model: BSRModel, fill: Fill) -> Callable[[Play], np.ndarray]:
    """Total P2 strategy agreeing with ``model`` wherever it is defined."""
    return BSRCompletion(model, fill)


# -- serialization ---------------------------------------------------------

BUNDLE_FORMAT = "hypergame-bundle/1"
_REGIONS = ("asw1", "asw2", "asw1_p", "asw2_p")
_STRATS = ("pi1", "pi2", "pi1_p", "pi2_p", "pi1_asw", "pi2_asw", "pi1_p_asw", "pi2_p_asw")


def _bits(mask: np.ndarray) -> str:
    return "".join("1" if m else "0" for m in mask)


def _unbits(text: str) -> np.ndarray:
    return np.array([c == "1" for c in text], dtype=bool)


def bundle_to_dict(bundle: HypergameBundle) -> dict:
    out = {
        "format": BUNDLE_FORMAT,
        "game": bundle.game.fingerprint(),
        "visible": list(bundle.visible),
        "gamma": repr(bundle.gamma),
        "tol": repr(bundle.tol),
        "regions": {},
        "strategies": {},
        "u1": [repr(float(v)) for v in bundle.u1.values],
        "u2": [repr(float(v)) for v in bundle.u2.values],
        "eq_value": [repr(float(v)) for v in bundle.eq_value],
    }
    for name in _REGIONS:
        r = getattr(bundle, name)
        out["regions"][name] = {"player": r.player, "tag": r.game_tag, "bits": _bits(r.members)}
    for name in _STRATS:
        pi = getattr(bundle, name)
        out["strategies"][name] = {
            "player": pi.player, "label": pi.label, "defined": _bits(pi.defined),
            "rows": [[repr(float(p)) for p in row] for row in pi.probs]}
    return out


def bundle_from_dict(data: dict, game: ConcurrentGame) -> HypergameBundle:
    if data.get("format") != BUNDLE_FORMAT:
        raise GameError(f"unsupported bundle format {data.get('format')!r}")
    if data["game"] != game.fingerprint():
        raise GameError("bundle was built for a different game")
    visible = tuple(data["visible"])
    fields = {}
    for name in _REGIONS:
        r = data["regions"][name]
        fields[name] = RegionSet(r["player"], _unbits(r["bits"]), r["tag"])
    for name in _STRATS:
        s = data["strategies"][name]
        fields[name] = MixedStrategy(s["player"], np.array(s["rows"], dtype=float),
                                     _unbits(s["defined"]), s["label"])
    u1 = np.array(data["u1"], dtype=float)
    u2 = np.array(data["u2"], dtype=float)
    return HypergameBundle(
        game=game, perceptual=derive_perceptual_game(game, visible), visible=visible,
        gamma=float(data["gamma"]), u1=UtilityVector(u1, 1, "pi1,pi2"),
        u2=UtilityVector(u2, 2, "pi1,pi2"), eq_value=np.array(data["eq_value"], dtype=float),
        tol=float(data["tol"]), **fields)


def save_bundle(bundle: HypergameBundle, path) -> None:
    with open(path, "w") as fh:
        json.dump(bundle_to_dict(bundle), fh)


def load_bundle(path, game: ConcurrentGame) -> HypergameBundle:
    with open(path) as fh:
        return bundle_from_dict(json.load(fh), game)
