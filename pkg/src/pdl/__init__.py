"""Learning dynamics laboratory for potential games.

Builds (potential) normal-form games, including the spiral / padded /
snake families with exponentially slow equilibrium convergence, runs
FTRL and fictitious-play dynamics on them deterministically, and checks
the quantitative structure of the trajectories (regret bounds, potential
ascent, gap growth, period traversal, dwell-time recursions).
"""

__version__ = "0.1.0"

from .constructions import (
    PaddedMatrix,
    SnakePath,
    find_snake,
    gamma_init,
    locator,
    locator_table,
    normalized_padded_game,
    padded_game,
    padded_matrix,
    snake_game,
    spiral_matrix,
    verify_snake,
)
from .dynamics import (
    ConfigError,
    DynamicsConfig,
    EngineError,
    RunResult,
    StreamResult,
    TrajectoryRecord,
    enrich_records,
    lazy_filter,
    learning_rate,
    load_run,
    run,
    run_stream,
    step_fictitious_play,
    step_ftrl,
)
from .games import (
    Game,
    cce_gap,
    expected_utility,
    game_from_dict,
    game_to_dict,
    load_game,
    nash_gap,
    nash_gap_vector,
    phi_range,
    potential_value,
    random_identical_matrix_game,
    save_game,
    smoothness_bound,
    utility_gradient,
    verify_potential,
)
from .regularizers import (
    RegularizerSpec,
    ftrl_argmax,
    parse_regularizer,
    reg_grad,
    reg_range,
    reg_value,
    simplex_project,
    uniform,
)

__all__ = [
    "__version__",
    "PaddedMatrix",
    "SnakePath",
    "find_snake",
    "gamma_init",
    "locator",
    "locator_table",
    "normalized_padded_game",
    "padded_game",
    "padded_matrix",
    "snake_game",
    "spiral_matrix",
    "verify_snake",
    "ConfigError",
    "DynamicsConfig",
    "EngineError",
    "RunResult",
    "StreamResult",
    "TrajectoryRecord",
    "enrich_records",
    "lazy_filter",
    "learning_rate",
    "load_run",
    "run",
    "run_stream",
    "step_fictitious_play",
    "step_ftrl",
    "Game",
    "cce_gap",
    "expected_utility",
    "game_from_dict",
    "game_to_dict",
    "load_game",
    "nash_gap",
    "nash_gap_vector",
    "phi_range",
    "potential_value",
    "random_identical_matrix_game",
    "save_game",
    "smoothness_bound",
    "utility_gradient",
    "verify_potential",
    "RegularizerSpec",
    "ftrl_argmax",
    "parse_regularizer",
    "reg_grad",
    "reg_range",
    "reg_value",
    "simplex_project",
    "uniform",
]
