"""Learning engines and run orchestration.

The engines implement FTRL (simultaneous and alternating, optionally lazy),
and fictitious play with explicit tie-break policies.  A run is strictly
sequential and deterministic: same game + config gives a bit-identical
trajectory, across process restarts and across checkpoint/resume, because
every floating-point operation that touches learner state goes through the
compiled scalar helpers in ``_kernels`` in a fixed order.

Two fast paths exist: a compiled loop for simultaneous two-player FTRL on
matrix games, and one for simultaneous fictitious play on n-player binary
tensor games.  Everything else (alternating updates, lazy filtering, FP on
matrix games, FTRL on tensors) runs in the Python engine, which calls the
same per-step helpers and therefore produces the same bits on the overlap.

Artifacts written by :func:`run` when an output directory is given:
``game.json``, ``config.json``, ``records.json``, ``state.json`` (resume
point), ``segmentation.json`` / ``dwells.json`` (when applicable),
``checkpoints/ckpt_<round>.json``, and ``manifest.json`` with content
hashes.  All floats serialize as hex strings and round-trip exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .games import (
    Game,
    nash_gap_vector,
    potential_value,
    save_game,
    game_to_dict,
    utility_gradient,
)
from .regularizers import RegularizerSpec, parse_regularizer, uniform

STATE_VERSION = 1

ALGORITHMS = ("ftrl", "fictitious_play")
UPDATE_MODES = ("simultaneous", "alternating")
TIE_BREAKS = ("adversarial_stay", "lexicographic")

# Guard rails for in-memory telemetry.
_MAX_RECORDS = 2_000_000
_DWELL_CAPACITY = 65_536


class ConfigError(ValueError):
    """A DynamicsConfig that cannot drive the given game."""


class EngineError(RuntimeError):
    """Engine abort (solver failure or telemetry overflow).

    Carries the failing round, the solver residual if any, and the path of
    the last checkpoint written before the failure (None if none).
    """

    def __init__(self, message, round=None, residual=None, last_checkpoint=None):
        super().__init__(message)
        self.round = round
        self.residual = residual
        self.last_checkpoint = last_checkpoint


def _canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def game_hash(game: Game) -> str:
    """SHA-256 of the canonical JSON serialization of the game."""
    return hashlib.sha256(_canonical_json(game_to_dict(game)).encode()).hexdigest()


@dataclass(frozen=True)
class DynamicsConfig:
    """Everything that determines a trajectory, plus telemetry cadence.

    Parameters
    ----------
    algorithm : str
        "ftrl" or "fictitious_play".
    regularizer : RegularizerSpec or str or None
        Required for FTRL; config strings like "entropy" or "tsallis:q=0.5"
        are parsed.  Ignored (forced to None) for fictitious play.
    alpha : float or None
        Learning-rate exponent: eta^(t) = t**(-alpha), alpha in [0, 1).
        Exactly one of alpha/eta must be set for FTRL.
    eta : float or None
        Constant learning rate (> 0).
    update_mode : str
        "simultaneous" (all players update each round) or "alternating"
        (player (t-1) mod n updates at round t; one round = one turn).
    lazy_epsilon : float or None
        When set (> 0, FTRL only), a proposed strategy is adopted only if
        it improves the instantaneous utility by at least lazy_epsilon.
    tie_break : str
        Fictitious play only: "adversarial_stay" keeps the current action
        on ties, "lexicographic" picks the lowest index.
    horizon : int
        Total number of rounds (>= 1).
    record_every : int
        Telemetry thinning: 0 records rounds 1, 2, 4, 8, ... plus the final
        round; s > 0 records every s-th round plus round 1 and the final
        round.  Lazy update events and period starts are always recorded.
    checkpoint_every : int or None
        Write a resumable checkpoint at every multiple of this stride
        (requires an output directory).
    init : str or tuple
        "uniform" (FTRL; the round-1 strategy is the regularizer minimizer),
        "path_start" (fictitious play on a snake game), or a tuple of
        1-based pure actions, one per player (fictitious play).
    track_periods : bool or None
        Track transition periods while running.  None enables tracking
        automatically for FTRL on padded-construction games.
    """

    algorithm: str = "ftrl"
    regularizer: RegularizerSpec | str | None = "entropy"
    alpha: float | None = None
    eta: float | None = None
    update_mode: str = "simultaneous"
    lazy_epsilon: float | None = None
    tie_break: str = "adversarial_stay"
    horizon: int = 1
    record_every: int = 0
    checkpoint_every: int | None = None
    init: str | tuple = "uniform"
    track_periods: bool | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.update_mode not in UPDATE_MODES:
            raise ConfigError(f"unknown update_mode {self.update_mode!r}")
        if self.tie_break not in TIE_BREAKS:
            raise ConfigError(f"unknown tie_break {self.tie_break!r}")
        if not (isinstance(self.horizon, int) and self.horizon >= 1):
            raise ConfigError("horizon must be an integer >= 1")
        if not (isinstance(self.record_every, int) and self.record_every >= 0):
            raise ConfigError("record_every must be an integer >= 0")
        if self.checkpoint_every is not None and not (
            isinstance(self.checkpoint_every, int) and self.checkpoint_every >= 1
        ):
            raise ConfigError("checkpoint_every must be None or an integer >= 1")
        if isinstance(self.init, list):
            object.__setattr__(self, "init", tuple(int(a) for a in self.init))

        if self.algorithm == "ftrl":
            spec = self.regularizer
            if isinstance(spec, str):
                spec = parse_regularizer(spec)
                object.__setattr__(self, "regularizer", spec)
            if not isinstance(spec, RegularizerSpec):
                raise ConfigError("ftrl needs a regularizer")
            if (self.alpha is None) == (self.eta is None):
                raise ConfigError("set exactly one of alpha (schedule) or eta")
            if self.alpha is not None:
                a = float(self.alpha)
                if not (0.0 <= a < 1.0):
                    raise ConfigError("alpha must lie in [0, 1)")
                object.__setattr__(self, "alpha", a)
            if self.eta is not None:
                e = float(self.eta)
                if not (e > 0.0 and math.isfinite(e)):
                    raise ConfigError("eta must be positive and finite")
                object.__setattr__(self, "eta", e)
            if self.lazy_epsilon is not None:
                le = float(self.lazy_epsilon)
                if not (le > 0.0 and math.isfinite(le)):
                    raise ConfigError("lazy_epsilon must be positive")
                object.__setattr__(self, "lazy_epsilon", le)
            if self.init != "uniform":
                raise ConfigError(
                    "ftrl plays the regularizer minimizer at round 1; "
                    "init must be 'uniform'"
                )
        else:
            object.__setattr__(self, "regularizer", None)
            if self.alpha is not None or self.eta is not None:
                raise ConfigError("fictitious play takes no learning rate")
            if self.lazy_epsilon is not None:
                raise ConfigError("the lazy rule applies to ftrl only")
            if self.init == "uniform":
                raise ConfigError(
                    "fictitious play needs a pure initialization: "
                    "'path_start' or a tuple of 1-based actions"
                )

    def validate(self, game: Game) -> None:
        """Game-dependent validation; raises ConfigError on mismatch."""
        if isinstance(self.init, tuple):
            if len(self.init) != game.players:
                raise ConfigError("init must list one action per player")
            for a, m in zip(self.init, game.action_counts):
                if not (1 <= a <= m):
                    raise ConfigError(f"init action {a} outside 1..{m}")
        if self.init == "path_start":
            if game.metadata.get("construction") != "snake":
                raise ConfigError("init 'path_start' needs a snake game")
        if self.track_periods:
            if "locators" not in game.metadata or "m" not in game.metadata:
                raise ConfigError(
                    "track_periods needs a game with locator metadata"
                )
        plan = _record_plan(0, self.horizon, self.record_every)
        if plan.shape[0] > _MAX_RECORDS:
            raise ConfigError(
                f"record plan has {plan.shape[0]} rounds (cap {_MAX_RECORDS}); "
                "increase record_every"
            )

    def learning_rate(self, t: int) -> float:
        """eta^(t), the rate used to compute the strategy for round t + 1."""
        return learning_rate(t, alpha=self.alpha, eta=self.eta)

    def to_dict(self) -> dict:
        spec = self.regularizer
        return {
            "algorithm": self.algorithm,
            "regularizer": spec.label if spec is not None else None,
            "alpha": self.alpha,
            "eta": self.eta,
            "update_mode": self.update_mode,
            "lazy_epsilon": self.lazy_epsilon,
            "tie_break": self.tie_break,
            "horizon": self.horizon,
            "record_every": self.record_every,
            "checkpoint_every": self.checkpoint_every,
            "init": list(self.init) if isinstance(self.init, tuple) else self.init,
            "track_periods": self.track_periods,
        }

    @staticmethod
    def from_dict(doc: dict) -> "DynamicsConfig":
        known = {
            "algorithm", "regularizer", "alpha", "eta", "update_mode",
            "lazy_epsilon", "tie_break", "horizon", "record_every",
            "checkpoint_every", "init", "track_periods",
        }
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown dynamics fields: {sorted(unknown)}")
        kwargs = dict(doc)
        if isinstance(kwargs.get("init"), list):
            kwargs["init"] = tuple(int(a) for a in kwargs["init"])
        if "horizon" in kwargs:
            kwargs["horizon"] = int(kwargs["horizon"])
        if kwargs.get("record_every") is not None:
            kwargs["record_every"] = int(kwargs["record_every"])
        if kwargs.get("checkpoint_every") is not None:
            kwargs["checkpoint_every"] = int(kwargs["checkpoint_every"])
        return DynamicsConfig(**kwargs)

    def config_hash(self) -> str:
        return hashlib.sha256(_canonical_json(self.to_dict()).encode()).hexdigest()

    def dynamics_signature(self) -> str:
        """Hash of the trajectory-determining fields.

        Horizon and telemetry cadence are excluded so a run can be resumed
        with a longer horizon or different recording without breaking the
        compatibility check.
        """
        doc = self.to_dict()
        for k in ("horizon", "record_every", "checkpoint_every"):
            doc.pop(k)
        return hashlib.sha256(_canonical_json(doc).encode()).hexdigest()


def learning_rate(t: int, alpha: float | None = None, eta: float | None = None) -> float:
    """The learning rate eta^(t) = t**(-alpha), or a configured constant.

    Matches the engines bit for bit (same pow call).  alpha = 0 gives the
    constant 1.0 schedule.
    """
    if t < 1:
        raise ValueError("rounds are 1-based")
    if eta is not None:
        return float(eta)
    if alpha is None:
        raise ValueError("need alpha or eta")
    if not (0.0 <= alpha < 1.0):
        raise ValueError("alpha must lie in [0, 1)")
    return float(K.lr_value(float(alpha), 0.0, int(t)))


def _lr_args(config: DynamicsConfig) -> tuple[float, float]:
    # Kernel encoding: alpha < 0 selects the constant schedule.
    if config.eta is not None:
        return -1.0, float(config.eta)
    return float(config.alpha), 0.0


@dataclass
class LearnerState:
    """Mutable per-player engine state.

    All scalar accumulators are compensated (Kahan) pairs so that gap
    signals of size O(1) survive horizons of 10^7+ rounds.  ``bound``
    accumulates eta_t * ||u_t||_*^2, the schedule-weighted dual-norm series
    from the regret bound.
    """

    strategy: np.ndarray
    cumulative: np.ndarray
    comp: np.ndarray
    sum_played: float = 0.0
    sum_comp: float = 0.0
    bound: float = 0.0
    bound_comp: float = 0.0
    last_utility: np.ndarray | None = None
    updates: int = 0

    def regret(self) -> float:
        """max_a U[a] - sum_t <x_t, u_t> through the current round."""
        return float(self.cumulative.max()) - self.sum_played


@dataclass
class TrajectoryRecord:
    """Snapshot of one round, as played.

    strategies/utilities/cumulatives are per player; ``cumulatives`` run
    through this round, and the strategy for the next round is recomputable
    as ftrl_argmax(cumulatives[i], eta).  ``updated`` marks players whose
    end-of-round proposal was adopted (always True outside lazy mode for
    the players who moved).  ``potential`` and ``nash_gaps`` are derived
    fields filled before serialization (or by analysis).
    """

    round: int
    eta: float | None
    strategies: tuple
    utilities: tuple
    cumulatives: tuple
    sums_played: tuple
    bounds: tuple
    updated: tuple
    period: int | None = None
    potential: float | None = None
    nash_gaps: tuple | None = None

    def gaps(self, player: int) -> np.ndarray:
        """Per-action cumulative utility gaps max_a' U[a'] - U[a]."""
        U = self.cumulatives[player]
        return U.max() - U

    @property
    def nash_gap(self) -> float | None:
        if self.nash_gaps is None:
            return None
        return max(self.nash_gaps)


@dataclass
class RunResult:
    """Everything a run produces, in memory."""

    game: Game
    config: DynamicsConfig
    records: list
    states: list
    rounds: int
    worst_residual: float = 0.0
    period_state: dict | None = None
    fp_dwells: list | None = None
    fp_open_dwell: tuple | None = None
    out_dir: Path | None = None

    def regret(self, player: int) -> float:
        return self.states[player].regret()

    def update_rounds(self, player: int | None = None) -> list:
        """Rounds whose record shows an adopted update (lazy bookkeeping)."""
        out = []
        for r in self.records:
            flags = r.updated if player is None else (r.updated[player],)
            if any(flags):
                out.append(r.round)
        return out


@dataclass
class StreamResult:
    """Single-learner run against a fixed utility stream."""

    regret: float
    bound_sum: float
    eta_final: float
    worst_residual: float


# ---------------------------------------------------------------------------
# Single-step operations (the public, composable forms of the engine steps).


def step_ftrl(state: LearnerState, observed_utility, eta: float,
              spec: RegularizerSpec) -> np.ndarray:
    """Accumulate one utility vector and return the next FTRL iterate.

    Mutates ``state.cumulative`` (compensated) and ``state.last_utility``;
    does not adopt the returned strategy (callers decide, e.g. the lazy
    rule).  Raises EngineError when the simplex solver misses its residual
    tolerance.
    """
    u = np.ascontiguousarray(observed_utility, dtype=np.float64)
    K.kahan_add_vec(state.cumulative, state.comp, u)
    state.last_utility = u
    out = np.empty_like(state.cumulative)
    resid = K.solve_simplex(spec.code, _q_of(spec), state.cumulative,
                            float(eta), out)
    if resid > K.SUM_TOL:
        raise EngineError(
            f"simplex solver residual {resid:.3e} exceeds {K.SUM_TOL:.0e}",
            residual=float(resid),
        )
    return out


def step_fictitious_play(state: LearnerState, tie_break: str = "adversarial_stay") -> np.ndarray:
    """Best response (a vertex) to the cumulative utilities.

    adversarial_stay keeps the current action when it ties the maximum;
    lexicographic always picks the lowest-index maximizer.
    """
    U = state.cumulative
    arg = 0
    best = U[0]
    for a in range(1, U.shape[0]):
        if U[a] > best:
            best = U[a]
            arg = a
    if tie_break == "adversarial_stay":
        cur = int(np.argmax(state.strategy))
        if U[cur] >= best:
            arg = cur
    out = np.zeros_like(U)
    out[arg] = 1.0
    return out


def lazy_filter(current, proposed, observed_utility, epsilon: float):
    """Adopt ``proposed`` iff it gains at least epsilon against the last
    utility vector; the comparison is inclusive.  Returns (strategy, flag).
    """
    gain = K.gain_seq(proposed, current, observed_utility)
    if gain >= epsilon:
        return proposed, True
    return current, False


def _q_of(spec: RegularizerSpec) -> float:
    return float(spec.q) if spec.q is not None else 0.0


# ---------------------------------------------------------------------------
# Record plan and checkpoint legs.


def _record_plan(t_start: int, t_end: int, record_every: int) -> np.ndarray:
    """Rounds in (t_start, t_end] to record.

    Round 1 and t_end are always included; in between, either multiples of
    record_every (> 0) or powers of two (record_every == 0).
    """
    pts = set()
    if record_every > 0:
        first = (t_start // record_every + 1) * record_every
        pts.update(range(first, t_end + 1, record_every))
    else:
        p = 1
        while p <= t_end:
            if p > t_start:
                pts.add(p)
            p <<= 1
    if t_start < 1 <= t_end:
        pts.add(1)
    if t_end > t_start:
        pts.add(t_end)
    return np.array(sorted(pts), dtype=np.int64)


def _legs(t_start: int, t_end: int, every: int | None) -> list:
    if every is None:
        return [(t_start, t_end)]
    legs = []
    a = t_start
    b = (t_start // every + 1) * every
    while b < t_end:
        legs.append((a, b))
        a = b
        b += every
    legs.append((a, t_end))
    return legs


# ---------------------------------------------------------------------------
# Engine cores and their serialization.


@dataclass
class _MixedCore:
    """State for the matrix-kernel and Python engines."""

    t: int
    states: list
    pst: np.ndarray | None = None
    starts: np.ndarray | None = None


@dataclass
class _FpCore:
    """State for the binary-tensor fictitious-play kernel."""

    t: int
    actions: np.ndarray = None
    U: np.ndarray = None
    C: np.ndarray = None
    SP: np.ndarray = None
    SPC: np.ndarray = None
    dwell_profile: np.ndarray = None
    dwell_len: np.ndarray = None
    dwell_state: np.ndarray = None


def _hex_list(arr) -> list:
    return [float(v).hex() for v in np.asarray(arr, dtype=np.float64).reshape(-1)]


def _unhex(values, shape=None) -> np.ndarray:
    arr = np.array([float.fromhex(v) for v in values], dtype=np.float64)
    return arr.reshape(shape) if shape is not None else arr


def _init_actions(game: Game, config: DynamicsConfig) -> list:
    """0-based pure actions for fictitious play."""
    if config.init == "path_start":
        first = game.metadata["path"][0]
        return [int(c) for c in first]
    return [a - 1 for a in config.init]


def _fresh_mixed_core(game: Game, config: DynamicsConfig) -> _MixedCore:
    states = []
    for i, m in enumerate(game.action_counts):
        if config.algorithm == "ftrl":
            x = uniform(m)
        else:
            x = np.zeros(m)
            x[_init_actions(game, config)[i]] = 1.0
        states.append(LearnerState(strategy=x, cumulative=np.zeros(m),
                                   comp=np.zeros(m)))
    return _MixedCore(t=0, states=states)


def _fresh_fp_core(game: Game, config: DynamicsConfig) -> _FpCore:
    n = game.players
    return _FpCore(
        t=0,
        actions=np.array(_init_actions(game, config), dtype=np.int64),
        U=np.zeros((n, 2)),
        C=np.zeros((n, 2)),
        SP=np.zeros(n),
        SPC=np.zeros(n),
        dwell_profile=np.empty(_DWELL_CAPACITY, dtype=np.int64),
        dwell_len=np.empty(_DWELL_CAPACITY, dtype=np.int64),
        dwell_state=np.array([0, -1, 0], dtype=np.int64),
    )


def _core_to_doc(core, config: DynamicsConfig, game: Game) -> dict:
    doc = {
        "version": STATE_VERSION,
        "round": core.t,
        "dynamics_signature": config.dynamics_signature(),
        "game_hash": game_hash(game),
    }
    if isinstance(core, _FpCore):
        nd = int(core.dwell_state[0])
        doc["kind"] = "fp_binary"
        doc["actions"] = [int(a) for a in core.actions]
        doc["U"] = _hex_list(core.U)
        doc["C"] = _hex_list(core.C)
        doc["SP"] = _hex_list(core.SP)
        doc["SPC"] = _hex_list(core.SPC)
        doc["dwells"] = {
            "profiles": [int(v) for v in core.dwell_profile[:nd]],
            "lengths": [int(v) for v in core.dwell_len[:nd]],
            "open_profile": int(core.dwell_state[1]),
            "open_length": int(core.dwell_state[2]),
        }
        return doc
    doc["kind"] = "mixed"
    doc["players"] = [
        {
            "strategy": _hex_list(s.strategy),
            "cumulative": _hex_list(s.cumulative),
            "comp": _hex_list(s.comp),
            "sum_played": float(s.sum_played).hex(),
            "sum_comp": float(s.sum_comp).hex(),
            "bound": float(s.bound).hex(),
            "bound_comp": float(s.bound_comp).hex(),
            "updates": s.updates,
        }
        for s in core.states
    ]
    if core.pst is not None:
        doc["period"] = {
            "pst": [int(v) for v in core.pst],
            "starts": [int(v) for v in core.starts],
        }
    else:
        doc["period"] = None
    return doc


def _core_from_doc(doc: dict, game: Game, config: DynamicsConfig):
    if doc.get("version") != STATE_VERSION:
        raise ConfigError(f"unsupported state version {doc.get('version')!r}")
    if doc["dynamics_signature"] != config.dynamics_signature():
        raise ConfigError("resume state was produced by different dynamics")
    if doc["game_hash"] != game_hash(game):
        raise ConfigError("resume state was produced on a different game")
    t = int(doc["round"])
    if doc["kind"] == "fp_binary":
        n = game.players
        core = _fresh_fp_core(game, config)
        core.t = t
        core.actions[:] = np.array(doc["actions"], dtype=np.int64)
        core.U[:] = _unhex(doc["U"], (n, 2))
        core.C[:] = _unhex(doc["C"], (n, 2))
        core.SP[:] = _unhex(doc["SP"])
        core.SPC[:] = _unhex(doc["SPC"])
        dw = doc["dwells"]
        nd = len(dw["profiles"])
        if nd > core.dwell_profile.shape[0]:
            raise ConfigError("checkpoint dwell table exceeds engine capacity")
        core.dwell_profile[:nd] = np.array(dw["profiles"], dtype=np.int64)
        core.dwell_len[:nd] = np.array(dw["lengths"], dtype=np.int64)
        core.dwell_state[:] = (nd, dw["open_profile"], dw["open_length"])
        return core
    states = []
    for p, m in zip(doc["players"], game.action_counts):
        states.append(
            LearnerState(
                strategy=_unhex(p["strategy"], (m,)),
                cumulative=_unhex(p["cumulative"], (m,)),
                comp=_unhex(p["comp"], (m,)),
                sum_played=float.fromhex(p["sum_played"]),
                sum_comp=float.fromhex(p["sum_comp"]),
                bound=float.fromhex(p["bound"]),
                bound_comp=float.fromhex(p["bound_comp"]),
                updates=int(p["updates"]),
            )
        )
    core = _MixedCore(t=t, states=states)
    if doc.get("period") is not None:
        core.pst = np.array(doc["period"]["pst"], dtype=np.int64)
        core.starts = np.array(doc["period"]["starts"], dtype=np.int64)
    return core


def _write_checkpoint(ck_dir: Path, core, config, game) -> str:
    ck_dir.mkdir(parents=True, exist_ok=True)
    path = ck_dir / f"ckpt_{core.t:012d}.json"
    path.write_text(json.dumps(_core_to_doc(core, config, game), indent=1))
    return str(path)


# ---------------------------------------------------------------------------
# Period tracking.


def _period_args(game: Game, config: DynamicsConfig):
    """(track, loc_r, loc_c, delta) resolved from config + game metadata."""
    meta = game.metadata
    track = config.track_periods
    if track is None:
        track = (
            config.algorithm == "ftrl"
            and meta.get("construction") in ("padded", "normalized_padded")
            and "locators" in meta
        )
    if not track:
        dummy = np.zeros(1, dtype=np.int64)
        return False, dummy, dummy, 0.0
    m = int(meta["m"])
    k_max = 2 * m - 1
    delta = float(meta.get("delta", 1.0 / (4 * m)))
    loc_r = np.empty(k_max - 2, dtype=np.int64)
    loc_c = np.empty(k_max - 2, dtype=np.int64)
    for k in range(3, k_max + 1):
        r, c = meta["locators"][str(k)]
        loc_r[k - 3] = int(r) - 1
        loc_c[k - 3] = int(c) - 1
    return True, loc_r, loc_c, delta


def _track_step(t, x1, x2, loc_r, loc_c, delta, pst, starts):
    """Python mirror of the in-kernel period tracker (same transitions)."""
    k_max = starts.shape[0] + 2
    if t == 1:
        pst[0] = 3
        if starts[0] < 0:
            starts[0] = 1
        return 3, False
    found = -1
    for k in range(k_max, 3, -1):
        if K.period_clause(k, x1, x2, loc_r, loc_c, delta):
            found = k
            break
    cur = int(pst[0])
    if found == -1 or found < cur:
        if pst[1] < 0:
            pst[1] = t
            pst[2] = found
        pst[3] += 1
        return cur, False
    new_start = False
    if found > cur:
        if found > cur + 1:
            if pst[1] < 0:
                pst[1] = t
                pst[2] = found
            pst[3] += 1
        pst[0] = found
        if starts[found - 3] < 0:
            starts[found - 3] = t
            new_start = True
    return found, new_start


def _period_summary(core: _MixedCore, horizon: int, delta: float) -> dict:
    starts = {}
    for idx, v in enumerate(core.starts):
        if v >= 0:
            starts[idx + 3] = int(v)
    return {
        "delta": delta,
        "current_period": int(core.pst[0]),
        "start_rounds": starts,
        "rounds": horizon,
        "violations": {
            "count": int(core.pst[3]),
            "first_round": int(core.pst[1]) if core.pst[1] >= 0 else None,
            "first_label": int(core.pst[2]) if core.pst[1] >= 0 else None,
        },
    }


# ---------------------------------------------------------------------------
# Engine dispatch.


def _matrix_kernel_ok(game: Game, config: DynamicsConfig) -> bool:
    return (
        config.algorithm == "ftrl"
        and game.players == 2
        and game.payoff_kind != "identical_tensor"
        and config.update_mode == "simultaneous"
        and config.lazy_epsilon is None
    )


def _fp_kernel_ok(game: Game, config: DynamicsConfig) -> bool:
    return (
        config.algorithm == "fictitious_play"
        and game.payoff_kind == "identical_tensor"
        and all(m == 2 for m in game.action_counts)
        and config.update_mode == "simultaneous"
    )


def run(game: Game, config: DynamicsConfig, out_dir=None, resume: bool = False,
        force_engine: str | None = None) -> RunResult:
    """Run the configured dynamics on the game.

    Parameters
    ----------
    game, config
        The instance to run; ``config.validate(game)`` is called first.
    out_dir : path-like or None
        When given, artifacts are written there (see module docstring) and
        checkpoints become available.  In-memory use passes None.
    resume : bool
        Continue from ``out_dir/state.json`` (or the newest checkpoint) to
        the configured horizon.  The saved state must match the config's
        dynamics signature and the game hash; the continuation is
        bit-identical to an uninterrupted run.
    force_engine : str or None
        None picks the fastest engine; "python" forces the per-step engine
        (diagnostics; produces the same bits on the compiled paths' domain).

    Returns
    -------
    RunResult
        Records, final learner states, period/dwell summaries.

    Raises
    ------
    ConfigError
        Invalid config/game combination or incompatible resume state.
    EngineError
        Solver residual failure or telemetry overflow; carries the failing
        round and the last checkpoint path.
    """
    config.validate(game)
    out = Path(out_dir) if out_dir is not None else None
    if config.checkpoint_every is not None and out is None:
        raise ConfigError("checkpoint_every needs an output directory")
    ck_dir = out / "checkpoints" if out is not None else None

    prior_records = []
    doc = None
    if resume:
        if out is None:
            raise ConfigError("resume needs the run's output directory")
        doc = _load_state_doc(out)
        prior_records = _load_records(out)
        if int(doc["round"]) > config.horizon:
            raise ConfigError(
                f"resume state is at round {doc['round']}, beyond the "
                f"horizon {config.horizon}"
            )

    use_fp_kernel = _fp_kernel_ok(game, config)
    use_matrix_kernel = _matrix_kernel_ok(game, config)
    if force_engine == "python":
        use_fp_kernel = use_matrix_kernel = False
    elif force_engine == "kernel":
        if not (use_fp_kernel or use_matrix_kernel):
            raise ConfigError("no compiled path handles this game/config")
    elif force_engine is not None:
        raise ConfigError(f"unknown engine override {force_engine!r}")

    if use_fp_kernel:
        core = _core_from_doc(doc, game, config) if doc else _fresh_fp_core(game, config)
        if not isinstance(core, _FpCore):
            raise ConfigError("resume state does not belong to this engine")
        records, worst, last_ck = _drive_fp_kernel(game, config, core, out, ck_dir)
        states = _fp_states(game, core)
        result = RunResult(
            game=game, config=config, records=prior_records + records,
            states=states, rounds=core.t, worst_residual=worst,
            fp_dwells=_fp_completed_dwells(core),
            fp_open_dwell=_fp_open_dwell(core), out_dir=out,
        )
    else:
        core = _core_from_doc(doc, game, config) if doc else _fresh_mixed_core(game, config)
        if not isinstance(core, _MixedCore):
            raise ConfigError("resume state does not belong to this engine")
        if use_matrix_kernel:
            records, worst, last_ck = _drive_matrix_kernel(game, config, core, out, ck_dir)
        else:
            records, worst, last_ck = _drive_python(game, config, core, out, ck_dir)
        track, _, _, delta = _period_args(game, config)
        result = RunResult(
            game=game, config=config, records=prior_records + records,
            states=core.states, rounds=core.t, worst_residual=worst,
            period_state=_period_summary(core, core.t, delta) if track else None,
            out_dir=out,
        )

    if out is not None:
        _write_artifacts(result, core, out)
    return result


def _fp_states(game: Game, core: _FpCore) -> list:
    states = []
    for i in range(game.players):
        x = np.zeros(2)
        x[int(core.actions[i])] = 1.0
        states.append(
            LearnerState(
                strategy=x,
                cumulative=core.U[i].copy(),
                comp=core.C[i].copy(),
                sum_played=float(core.SP[i]),
                sum_comp=float(core.SPC[i]),
                updates=core.t,
            )
        )
    return states


def _fp_completed_dwells(core: _FpCore) -> list:
    nd = int(core.dwell_state[0])
    return [(int(core.dwell_profile[j]), int(core.dwell_len[j])) for j in range(nd)]


def _fp_open_dwell(core: _FpCore):
    if int(core.dwell_state[2]) > 0:
        return (int(core.dwell_state[1]), int(core.dwell_state[2]))
    return None


# ---------------------------------------------------------------------------
# Compiled drivers.


def _drive_matrix_kernel(game, config, core, out, ck_dir):
    A1, A2 = game.engine_matrices()
    m1, m2 = game.action_counts
    spec = config.regularizer
    a_k, e_k = _lr_args(config)
    s0, s1 = core.states
    track, loc_r, loc_c, delta = _period_args(game, config)
    if track and core.pst is None:
        core.pst = np.array([3, -1, -1, 0], dtype=np.int64)
        core.starts = np.full(loc_r.shape[0], -1, dtype=np.int64)
    pst = core.pst if track else np.zeros(4, dtype=np.int64)
    starts = core.starts if track else np.full(1, -1, dtype=np.int64)

    plan_all = _record_plan(core.t, config.horizon, config.record_every)
    records = []
    worst = 0.0
    last_ck = None
    for a, b in _legs(core.t, config.horizon, config.checkpoint_every):
        lo = int(np.searchsorted(plan_all, a, side="right"))
        hi = int(np.searchsorted(plan_all, b, side="right"))
        plan = np.ascontiguousarray(plan_all[lo:hi])
        cap = plan.shape[0] + starts.shape[0] + 4
        rec_round = np.empty(cap, dtype=np.int64)
        rec_eta = np.empty(cap)
        rec_period = np.empty(cap, dtype=np.int64)
        rec_x1 = np.empty((cap, m1))
        rec_x2 = np.empty((cap, m2))
        rec_u1 = np.empty((cap, m1))
        rec_u2 = np.empty((cap, m2))
        rec_U1 = np.empty((cap, m1))
        rec_U2 = np.empty((cap, m2))
        rec_sum1 = np.empty(cap)
        rec_sum2 = np.empty(cap)
        rec_bnd1 = np.empty(cap)
        rec_bnd2 = np.empty(cap)
        acc = np.array([
            s0.sum_played, s0.sum_comp, s1.sum_played, s1.sum_comp,
            s0.bound, s0.bound_comp, s1.bound, s1.bound_comp,
        ])
        nrec, w, fail = K.run_two_player_ftrl(
            A1, A2, spec.code, _q_of(spec), a_k, e_k, a, b,
            s0.strategy, s1.strategy,
            s0.cumulative, s0.comp, s1.cumulative, s1.comp,
            acc, plan,
            rec_round, rec_eta, rec_period,
            rec_x1, rec_x2, rec_u1, rec_u2, rec_U1, rec_U2,
            rec_sum1, rec_sum2, rec_bnd1, rec_bnd2,
            track, loc_r, loc_c, delta, pst, starts,
        )
        (s0.sum_played, s0.sum_comp, s1.sum_played, s1.sum_comp,
         s0.bound, s0.bound_comp, s1.bound, s1.bound_comp) = (float(v) for v in acc)
        worst = max(worst, float(w))
        for j in range(nrec):
            records.append(TrajectoryRecord(
                round=int(rec_round[j]),
                eta=float(rec_eta[j]),
                strategies=(rec_x1[j].copy(), rec_x2[j].copy()),
                utilities=(rec_u1[j].copy(), rec_u2[j].copy()),
                cumulatives=(rec_U1[j].copy(), rec_U2[j].copy()),
                sums_played=(float(rec_sum1[j]), float(rec_sum2[j])),
                bounds=(float(rec_bnd1[j]), float(rec_bnd2[j])),
                updated=(True, True),
                period=int(rec_period[j]) if track else None,
            ))
        if fail >= 0:
            raise EngineError(
                f"simplex solver residual {w:.3e} exceeded {K.SUM_TOL:.0e} "
                f"at round {fail}"
                + (f"; last checkpoint {last_ck}" if last_ck else ""),
                round=int(fail), residual=float(w), last_checkpoint=last_ck,
            )
        core.t = b
        s0.updates = core.t
        s1.updates = core.t
        if (ck_dir is not None and config.checkpoint_every
                and b % config.checkpoint_every == 0):
            last_ck = _write_checkpoint(ck_dir, core, config, game)
    return records, worst, last_ck


def _drive_fp_kernel(game, config, core, out, ck_dir):
    flat = np.ascontiguousarray(game.payoffs[0].flatten(order="F"))
    n = game.players
    tie_code = 0 if config.tie_break == "adversarial_stay" else 1
    plan_all = _record_plan(core.t, config.horizon, config.record_every)
    records = []
    last_ck = None
    for a, b in _legs(core.t, config.horizon, config.checkpoint_every):
        lo = int(np.searchsorted(plan_all, a, side="right"))
        hi = int(np.searchsorted(plan_all, b, side="right"))
        plan = np.ascontiguousarray(plan_all[lo:hi])
        cap = plan.shape[0] + 2
        rec_round = np.empty(cap, dtype=np.int64)
        rec_act = np.empty((cap, n), dtype=np.int64)
        rec_U = np.empty((cap, n, 2))
        rec_sum = np.empty((cap, n))
        nrec, overflow = K.run_fp_binary(
            flat, n, a, b, core.actions, core.U, core.C, core.SP, core.SPC,
            tie_code, plan, rec_round, rec_act, rec_U, rec_sum,
            core.dwell_profile, core.dwell_len, core.dwell_state,
        )
        if overflow:
            raise EngineError(
                f"fictitious play produced more than {_DWELL_CAPACITY} dwell "
                f"segments by round {b}; the play is cycling rather than "
                "traversing"
                + (f"; last checkpoint {last_ck}" if last_ck else ""),
                round=b, last_checkpoint=last_ck,
            )
        for j in range(nrec):
            idx = 0
            for i in range(n):
                idx |= int(rec_act[j, i]) << i
            strategies = []
            utilities = []
            for i in range(n):
                x = np.zeros(2)
                x[int(rec_act[j, i])] = 1.0
                strategies.append(x)
                base = idx & ~(1 << i)
                utilities.append(np.array([flat[base], flat[base | (1 << i)]]))
            records.append(TrajectoryRecord(
                round=int(rec_round[j]),
                eta=None,
                strategies=tuple(strategies),
                utilities=tuple(utilities),
                cumulatives=tuple(rec_U[j, i].copy() for i in range(n)),
                sums_played=tuple(float(v) for v in rec_sum[j]),
                bounds=(0.0,) * n,
                updated=(True,) * n,
            ))
        core.t = b
        if (ck_dir is not None and config.checkpoint_every
                and b % config.checkpoint_every == 0):
            last_ck = _write_checkpoint(ck_dir, core, config, game)
    return records, 0.0, last_ck


# ---------------------------------------------------------------------------
# Python engine (alternating, lazy, FP on matrices, FTRL on tensors).


def _drive_python(game, config, core, out, ck_dir):
    n = game.players
    ms = game.action_counts
    states = core.states
    two_matrix = n == 2 and game.payoff_kind != "identical_tensor"
    if two_matrix:
        A1, A2 = game.engine_matrices()
        u_bufs = [np.empty(ms[0]), np.empty(ms[1])]
    spec = config.regularizer
    is_ftrl = config.algorithm == "ftrl"
    if is_ftrl:
        a_k, e_k = _lr_args(config)
        norm_code = 1 if spec.code == K.REG_ENTROPY else 2
        q = _q_of(spec)
    lazy = config.lazy_epsilon
    simultaneous = config.update_mode == "simultaneous"

    track, loc_r, loc_c, delta = _period_args(game, config)
    if track and core.pst is None:
        core.pst = np.array([3, -1, -1, 0], dtype=np.int64)
        core.starts = np.full(loc_r.shape[0], -1, dtype=np.int64)

    plan = _record_plan(core.t, config.horizon, config.record_every)
    pc = 0
    records = []
    worst = 0.0
    last_ck = None

    for t in range(core.t + 1, config.horizon + 1):
        if two_matrix:
            K.matvec_rows(A1, states[1].strategy, u_bufs[0])
            K.matvec_cols(A2, states[0].strategy, u_bufs[1])
            u = u_bufs
        else:
            xs = [s.strategy for s in states]
            u = [utility_gradient(game, xs, i) for i in range(n)]
        for i, s in enumerate(states):
            d = K.dot_seq(s.strategy, u[i])
            s.sum_played, s.sum_comp = K.kahan_add(s.sum_played, s.sum_comp, d)
            K.kahan_add_vec(s.cumulative, s.comp, u[i])
        eta = None
        if is_ftrl:
            eta = K.lr_value(a_k, e_k, t)
            for i, s in enumerate(states):
                s.bound, s.bound_comp = K.kahan_add(
                    s.bound, s.bound_comp, eta * K.dual_norm_sq(u[i], norm_code)
                )

        k_t = None
        new_start = False
        if track:
            k_t, new_start = _track_step(
                t, states[0].strategy, states[1].strategy,
                loc_r, loc_c, delta, core.pst, core.starts,
            )

        movers = range(n) if simultaneous else ((t - 1) % n,)
        updated = [False] * n
        proposals = {}
        for i in movers:
            if is_ftrl:
                prop = np.empty(ms[i])
                resid = K.solve_simplex(spec.code, q, states[i].cumulative,
                                        eta, prop)
                worst = max(worst, float(resid))
                if resid > K.SUM_TOL:
                    raise EngineError(
                        f"simplex solver residual {resid:.3e} exceeded "
                        f"{K.SUM_TOL:.0e} at round {t} (player {i + 1})"
                        + (f"; last checkpoint {last_ck}" if last_ck else ""),
                        round=t, residual=float(resid), last_checkpoint=last_ck,
                    )
                if lazy is not None:
                    prop, ok = lazy_filter(states[i].strategy, prop, u[i], lazy)
                    updated[i] = ok
                    if ok:
                        proposals[i] = prop
                else:
                    updated[i] = True
                    proposals[i] = prop
            else:
                proposals[i] = step_fictitious_play(states[i], config.tie_break)
                updated[i] = True

        do_rec = pc < plan.shape[0] and plan[pc] == t
        if do_rec:
            pc += 1
        if new_start or (lazy is not None and any(updated)):
            do_rec = True
        if do_rec:
            records.append(TrajectoryRecord(
                round=t,
                eta=eta,
                strategies=tuple(s.strategy.copy() for s in states),
                utilities=tuple(np.array(u[i], copy=True) for i in range(n)),
                cumulatives=tuple(s.cumulative.copy() for s in states),
                sums_played=tuple(s.sum_played for s in states),
                bounds=tuple(s.bound for s in states),
                updated=tuple(updated),
                period=k_t if track else None,
            ))

        for i, prop in proposals.items():
            states[i].strategy = prop
            states[i].updates += 1
        core.t = t
        if (ck_dir is not None and config.checkpoint_every
                and t % config.checkpoint_every == 0):
            last_ck = _write_checkpoint(ck_dir, core, config, game)
    return records, worst, last_ck


# ---------------------------------------------------------------------------
# Streams (single learner, fixed utility sequence).


def run_stream(utilities, spec: RegularizerSpec, alpha: float | None = None,
               eta: float | None = None) -> StreamResult:
    """FTRL against a fixed stream of utility vectors.

    utilities has shape (T, m): row t-1 is the vector revealed at round t.
    Returns the exact regret together with the accumulated bound series
    sum_t eta_t * ||u_t||_*^2 and the final learning rate.
    """
    utils = np.ascontiguousarray(utilities, dtype=np.float64)
    if utils.ndim != 2 or utils.shape[0] < 1:
        raise ValueError("utilities must be a (T, m) array with T >= 1")
    cfg_alpha, cfg_eta = (alpha, eta)
    if (cfg_alpha is None) == (cfg_eta is None):
        raise ValueError("set exactly one of alpha or eta")
    if cfg_eta is not None:
        a_k, e_k = -1.0, float(cfg_eta)
    else:
        if not (0.0 <= cfg_alpha < 1.0):
            raise ValueError("alpha must lie in [0, 1)")
        a_k, e_k = float(cfg_alpha), 0.0
    regret, bnd, eta_T, worst_r = K.run_stream_ftrl(
        utils, spec.code, _q_of(spec), a_k, e_k
    )
    if worst_r > K.SUM_TOL:
        raise EngineError(
            f"simplex solver residual {worst_r:.3e} exceeded {K.SUM_TOL:.0e}",
            residual=float(worst_r),
        )
    return StreamResult(regret=float(regret), bound_sum=float(bnd),
                        eta_final=float(eta_T), worst_residual=float(worst_r))


# ---------------------------------------------------------------------------
# Artifacts.


def _record_to_dict(r: TrajectoryRecord) -> dict:
    return {
        "round": r.round,
        "eta": float(r.eta).hex() if r.eta is not None else None,
        "period": r.period,
        "potential": float(r.potential).hex() if r.potential is not None else None,
        "nash_gaps": (
            [float(v).hex() for v in r.nash_gaps]
            if r.nash_gaps is not None else None
        ),
        "strategies": [_hex_list(x) for x in r.strategies],
        "utilities": [_hex_list(x) for x in r.utilities],
        "cumulatives": [_hex_list(x) for x in r.cumulatives],
        "gaps": [_hex_list(r.gaps(i)) for i in range(len(r.strategies))],
        "sums_played": [float(v).hex() for v in r.sums_played],
        "bounds": [float(v).hex() for v in r.bounds],
        "updated": list(r.updated),
    }


def _record_from_dict(doc: dict) -> TrajectoryRecord:
    return TrajectoryRecord(
        round=int(doc["round"]),
        eta=float.fromhex(doc["eta"]) if doc["eta"] is not None else None,
        period=doc["period"],
        potential=(
            float.fromhex(doc["potential"])
            if doc.get("potential") is not None else None
        ),
        nash_gaps=(
            tuple(float.fromhex(v) for v in doc["nash_gaps"])
            if doc.get("nash_gaps") is not None else None
        ),
        strategies=tuple(_unhex(x) for x in doc["strategies"]),
        utilities=tuple(_unhex(x) for x in doc["utilities"]),
        cumulatives=tuple(_unhex(x) for x in doc["cumulatives"]),
        sums_played=tuple(float.fromhex(v) for v in doc["sums_played"]),
        bounds=tuple(float.fromhex(v) for v in doc["bounds"]),
        updated=tuple(bool(v) for v in doc["updated"]),
    )


def enrich_records(records, game: Game) -> None:
    """Fill the derived potential and per-player Nash-gap fields in place."""
    has_pot = game.identical_interest or game.potential is not None
    for r in records:
        if r.potential is None and has_pot:
            r.potential = potential_value(game, list(r.strategies))
        if r.nash_gaps is None:
            r.nash_gaps = tuple(
                float(v) for v in nash_gap_vector(game, list(r.strategies))
            )


def _load_state_doc(out: Path) -> dict:
    state = out / "state.json"
    if state.is_file():
        return json.loads(state.read_text())
    ck_dir = out / "checkpoints"
    if ck_dir.is_dir():
        cks = sorted(ck_dir.glob("ckpt_*.json"))
        if cks:
            return json.loads(cks[-1].read_text())
    raise ConfigError(f"no state.json or checkpoints under {out}")


def _load_records(out: Path) -> list:
    path = out / "records.json"
    if not path.is_file():
        return []
    return [_record_from_dict(d) for d in json.loads(path.read_text())]


def _write_artifacts(result: RunResult, core, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    save_game(result.game, out / "game.json")
    (out / "config.json").write_text(
        json.dumps(result.config.to_dict(), indent=1)
    )
    enrich_records(result.records, result.game)
    (out / "records.json").write_text(
        json.dumps([_record_to_dict(r) for r in result.records], indent=1)
    )
    (out / "state.json").write_text(
        json.dumps(_core_to_doc(core, result.config, result.game), indent=1)
    )
    if result.period_state is not None:
        doc = dict(result.period_state)
        doc["start_rounds"] = {str(k): v for k, v in doc["start_rounds"].items()}
        (out / "segmentation.json").write_text(json.dumps(doc, indent=1))
    if result.fp_dwells is not None:
        (out / "dwells.json").write_text(json.dumps({
            "profiles": [p for p, _ in result.fp_dwells],
            "lengths": [l for _, l in result.fp_dwells],
            "open_profile": result.fp_open_dwell[0] if result.fp_open_dwell else None,
            "open_length": result.fp_open_dwell[1] if result.fp_open_dwell else None,
        }, indent=1))
    _write_manifest(out, result.config, result.game)


def _write_manifest(out: Path, config: DynamicsConfig, game: Game) -> None:
    import numba

    from . import __version__

    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[p.relative_to(out).as_posix()] = hashlib.sha256(
                p.read_bytes()
            ).hexdigest()
    doc = {
        "config_hash": config.config_hash(),
        "dynamics_signature": config.dynamics_signature(),
        "game_hash": game_hash(game),
        "versions": {
            "artifact": __version__,
            "numpy": np.__version__,
            "numba": numba.__version__,
        },
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=1))


def load_run(out_dir) -> RunResult:
    """Rehydrate a RunResult from an artifact directory (for analysis/CLI)."""
    from .games import load_game

    out = Path(out_dir)
    game = load_game(out / "game.json")
    config = DynamicsConfig.from_dict(json.loads((out / "config.json").read_text()))
    records = _load_records(out)
    doc = _load_state_doc(out)
    core = _core_from_doc(doc, game, config)
    if isinstance(core, _FpCore):
        states = _fp_states(game, core)
        result = RunResult(
            game=game, config=config, records=records, states=states,
            rounds=core.t, fp_dwells=_fp_completed_dwells(core),
            fp_open_dwell=_fp_open_dwell(core), out_dir=out,
        )
    else:
        track, _, _, delta = _period_args(game, config)
        result = RunResult(
            game=game, config=config, records=records, states=core.states,
            rounds=core.t,
            period_state=_period_summary(core, core.t, delta)
            if track and core.pst is not None else None,
            out_dir=out,
        )
    return result
