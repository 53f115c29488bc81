import json
import subprocess

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_game, toy_game
from hypergame_deception.game import (ConcurrentGame, GameError, Play, UndefinedTransitionError,
                                      content_hash, game_from_dict, game_to_dict, load_game,
                                      make_game, sample_transition, save_game,
                                      successor_distribution, validate_game)
from hypergame_deception.soccer import (BASIC, BOUNCING_APPROX, GridConfig, SoccerLayout,
                                        SoccerState, build_soccer_game, layout_of, soccer_outcomes)


def test_soccer_basic_is_well_formed(soccer):
    game, hidden = soccer
    assert game.n_states == 450
    assert validate_game(game) == []
    assert game.targets1.sum() == 45 and game.targets2.sum() == 45
    assert hidden == frozenset({"aH"})


def test_bouncing_is_well_formed(bouncing):
    game, _ = bouncing
    assert validate_game(game) == []
    assert game.n_states == 11 * 11 * 2


def test_validate_flags_bad_rows():
    game = toy_game()
    kernel = game.kernel.copy()
    kernel[0, 0, 0, 0] += 0.1
    bad = ConcurrentGame(game.states, game.actions1, game.actions2, kernel, game.enabled1,
                         game.enabled2, 0, 0.9, game.targets1, game.targets2)
    kinds = {v.kind for v in validate_game(bad)}
    assert kinds == {"row-sum"}


def test_validate_flags_non_absorbing_target():
    tr = {(0, 0, 0): {1: 1.0}, (1, 0, 0): {0: 1.0}}
    game = make_game(["a", "b"], ["x"], ["y"], tr, targets1=[1], absorb_targets=False)
    assert [v.kind for v in validate_game(game)] == ["not-absorbing"]


def test_successor_distribution_and_undefined():
    game = toy_game()
    dist = successor_distribution(game, 0, "h", "x")
    assert dist == pytest.approx({0: 0.7, 1: 0.3})
    perceptual_kernel = game.kernel.copy()
    en1 = game.enabled1.copy()
    en1[0, 1] = False
    perceptual_kernel[0, 1] = 0.0
    g2 = ConcurrentGame(game.states, game.actions1, game.actions2, perceptual_kernel, en1,
                        game.enabled2, 0, 0.9, game.targets1, game.targets2)
    with pytest.raises(UndefinedTransitionError):
        successor_distribution(g2, 0, "h", "x")


def test_sample_transition_is_seeded():
    game = toy_game()
    draws = [sample_transition(game, 0, 1, 0, seed) for seed in range(50)]
    assert draws == [sample_transition(game, 0, 1, 0, seed) for seed in range(50)]
    assert set(draws) <= {0, 1, 2}


def test_sample_transition_frequencies():
    game = toy_game()
    rng = np.random.default_rng(3)
    counts = np.bincount([sample_transition(game, 0, 0, 1, rng) for _ in range(20000)],
                         minlength=3)
    assert np.allclose(counts / counts.sum(), [0.2, 0.3, 0.5], atol=0.015)


def test_play_consistency():
    game = toy_game()
    play = Play([0])
    play.extend(1, 0, 0)
    play.extend(1, 1, 1)
    assert len(play) == 2 and play.last == 1
    assert play.is_consistent(game)
    assert play.prefix(1).states == [0, 0]
    play.extend(0, 0, 2)  # target 1 only loops to itself
    assert not play.is_consistent(game)
    with pytest.raises(GameError):
        Play([0, 1], [0], [])


def test_content_hash_matches_git():
    data = b"hello\n"
    assert content_hash(data) == "ce013625030ba8dba906f756967f9e9ca394464a"
    try:
        out = subprocess.run(["git", "hash-object", "--stdin"], input=b"x" * 37,
                             capture_output=True, check=True).stdout.decode().strip()
    except (OSError, subprocess.CalledProcessError):
        pytest.skip("git unavailable")
    assert content_hash(b"x" * 37) == out


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_serialization_roundtrip(seed):
    game = random_game(np.random.default_rng(seed), n_states=5, n1=2, n2=3)
    again = game_from_dict(json.loads(json.dumps(game_to_dict(game))))
    assert again == game
    assert again.fingerprint() == game.fingerprint()


def test_save_load_soccer(tmp_path, soccer):
    game, _ = soccer
    path = tmp_path / "g.json"
    save_game(game, path)
    assert load_game(path) == game


def test_grid_block_is_expanded():
    game = game_from_dict({"grid": BOUNCING_APPROX.to_dict(), "discount": 0.9})
    assert game.discount == 0.9
    assert layout_of(game).cfg == BOUNCING_APPROX


def test_layout_roundtrip():
    layout = SoccerLayout(BASIC)
    for s in range(layout.n_states):
        assert layout.encode(layout.decode(s)) == s


def test_collision_reassigns_ball():
    cfg = GridConfig(collision_ball_prob=0.25)
    st0 = SoccerState((1, 1), (1, 3), 1)
    out = dict(soccer_outcomes(cfg, st0, "aR", "aL"))
    assert out == {SoccerState((1, 2), (1, 2), 1): 0.25, SoccerState((1, 2), (1, 2), 0): 0.75}
    # swapping cells also collides
    st1 = SoccerState((1, 1), (1, 2), 0)
    assert len(soccer_outcomes(cfg, st1, "aR", "aL")) == 2
    # otherwise the ball stays put
    assert soccer_outcomes(cfg, st0, "aU", "aD") == [(SoccerState((0, 1), (2, 3), 1), 1.0)]


def test_hidden_move_crosses_hidden_cell():
    cfg = BOUNCING_APPROX
    st0 = SoccerState((2, 2), (0, 0), 1)
    out = soccer_outcomes(cfg, st0, "aH", "aU")
    assert out == [(SoccerState((2, 4), (0, 0), 1), 1.0)]
    # a visible move into the hidden cell is blocked
    assert soccer_outcomes(cfg, st0, "aR", "aU")[0][0].p1 == (2, 2)


def test_grid_config_rejects_bad_layout():
    with pytest.raises(Exception):
        build_soccer_game(GridConfig(rows=1, cols=1))
