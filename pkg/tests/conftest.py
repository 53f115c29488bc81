import numpy as np
import pytest

from hypergame_deception import (BASIC, BOUNCING_APPROX, DetectorConfig, build_hypergame,
                                 build_semi_mdp, build_soccer_game, make_game, solve_semi_mdp)


def visible_of(game, hidden):
    return [a for a in game.actions1 if a not in hidden]


@pytest.fixture(scope="session")
def soccer():
    game, hidden = build_soccer_game(BASIC)
    return game, hidden


@pytest.fixture(scope="session")
def soccer_bundle(soccer):
    game, hidden = soccer
    return build_hypergame(game, visible_of(game, hidden))


@pytest.fixture(scope="session")
def soccer_full_bundle(soccer):
    game, _ = soccer
    return build_hypergame(game, list(game.actions1))


@pytest.fixture(scope="session")
def soccer_mdp(soccer_bundle):
    return build_semi_mdp(soccer_bundle, DetectorConfig(), 0.2)


@pytest.fixture(scope="session")
def soccer_solution(soccer_mdp):
    return solve_semi_mdp(soccer_mdp)


@pytest.fixture(scope="session")
def bouncing():
    return build_soccer_game(BOUNCING_APPROX)


def toy_game(discount=0.9):
    """Three states: start, P1's goal, P2's goal.

    P2 only knows the visible ``v`` and answers it with ``x``. P1's hidden
    ``h`` beats ``x`` in one step and makes staying put much more likely
    than ``v`` does, so P2's detector needs at least two stays to cross a
    threshold of 2.
    """
    s, win, lose = 0, 1, 2
    tr = {
        (s, 0, 0): {win: 0.1, lose: 0.7, s: 0.2},
        (s, 0, 1): {win: 0.3, lose: 0.5, s: 0.2},
        (s, 1, 0): {win: 0.3, s: 0.7},
        (s, 1, 1): {win: 0.2, lose: 0.1, s: 0.7},
    }
    return make_game(["start", "win", "lose"], ["v", "h"], ["x", "y"], tr,
                     targets1=[win], targets2=[lose], discount=discount)


@pytest.fixture(scope="session")
def toy():
    return toy_game()


def random_game(rng, n_states=6, n1=3, n2=3, density=0.5, discount=0.9):
    """Random game; the last two states are the players' absorbing targets."""
    n = n_states
    tr = {}
    for s in range(n - 2):
        for a in range(n1):
            for b in range(n2):
                mask = rng.random(n) < density
                mask[rng.integers(n)] = True
                p = rng.random(n) * mask
                tr[(s, a, b)] = {int(t): float(p[t] / p.sum()) for t in np.flatnonzero(p)}
    return make_game([f"s{i}" for i in range(n)], [f"a{i}" for i in range(n1)],
                     [f"b{i}" for i in range(n2)], tr, targets1=[n - 2], targets2=[n - 1],
                     discount=discount)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record and print one pass/fail line per acceptance criterion."""

    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}"
        if detail:
            line += f" | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda x: int(x.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
