"""Action deception in concurrent stochastic reachability games."""

from .game import ConcurrentGame, ConfigError, GameError, load_game, make_game, save_game, validate_game
from .soccer import BASIC, BOUNCING_APPROX, GridConfig, build_soccer_game
from .solvers import compute_asw, evaluate_profile, solve_zero_sum
from .perception import build_hypergame, derive_perceptual_game
from .detection import DetectorConfig, build_hypotheses, update_discrimination
from .planner import build_semi_mdp, build_strong_opponent_mdp, solve_semi_mdp, value_of_deception

__version__ = "0.1.0"
