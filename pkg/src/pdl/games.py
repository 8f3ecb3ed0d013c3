"""Normal-form games: containers, expected-value operators, gap measures.

A Game holds payoffs in one of three layouts:

``matrix_pair``       two players, separate payoff matrices (A1, A2), both
                      shaped (m1, m2); player 2 reads A2 column-wise.
``identical_matrix``  two players sharing one matrix: u1 = A x2, u2 = A^T x1.
``identical_tensor``  n players sharing a payoff tensor indexed by pure
                      profiles (axis i = player i's action).

Identical-interest games are exact potential games with the payoff itself as
potential.  A matrix_pair may carry an explicit potential matrix; otherwise
``verify_potential`` integrates a candidate along deviation paths and checks
it exhaustively.

Serialization uses JSON with float64 values written as ``float.hex()``
strings, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAYOFF_KINDS = ("matrix_pair", "identical_matrix", "identical_tensor")

# Profile-enumeration guard for exhaustive potential verification.
_MAX_ENUM_PROFILES = 2_000_000


@dataclass(frozen=True, eq=False)
class Game:
    """A normal-form game.

    Attributes
    ----------
    payoff_kind : str
        One of PAYOFF_KINDS.
    action_counts : tuple[int, ...]
        Actions per player (all >= 2).
    payoffs : tuple[numpy.ndarray, ...]
        One array for identical kinds, two for matrix_pair.
    potential : numpy.ndarray or None
        Explicit potential tensor for non-identical potential games.
    metadata : dict
        Free-form construction info (serialized verbatim).
    """

    payoff_kind: str
    action_counts: tuple[int, ...]
    payoffs: tuple[np.ndarray, ...]
    potential: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.payoff_kind not in PAYOFF_KINDS:
            raise ValueError(f"unknown payoff_kind {self.payoff_kind!r}")
        counts = tuple(int(m) for m in self.action_counts)
        object.__setattr__(self, "action_counts", counts)
        if any(m < 2 for m in counts):
            raise ValueError("every player needs at least 2 actions")
        arrays = tuple(
            np.ascontiguousarray(p, dtype=np.float64) for p in self.payoffs
        )
        object.__setattr__(self, "payoffs", arrays)
        for p in arrays:
            if not np.all(np.isfinite(p)):
                raise ValueError("payoffs must be finite")
        if self.payoff_kind == "matrix_pair":
            if len(counts) != 2 or len(arrays) != 2:
                raise ValueError("matrix_pair needs 2 players and 2 matrices")
            if arrays[0].shape != counts or arrays[1].shape != counts:
                raise ValueError("payoff matrices must be shaped (m1, m2)")
        elif self.payoff_kind == "identical_matrix":
            if len(counts) != 2 or len(arrays) != 1:
                raise ValueError("identical_matrix needs 2 players, 1 matrix")
            if arrays[0].shape != counts:
                raise ValueError("payoff matrix must be shaped (m1, m2)")
        else:
            if len(arrays) != 1:
                raise ValueError("identical_tensor needs exactly 1 tensor")
            if arrays[0].shape != counts:
                raise ValueError("tensor shape must equal action_counts")
        if self.potential is not None:
            pot = np.ascontiguousarray(self.potential, dtype=np.float64)
            if pot.shape != counts:
                raise ValueError("potential tensor shape must match profiles")
            object.__setattr__(self, "potential", pot)

    @property
    def players(self) -> int:
        return len(self.action_counts)

    @property
    def identical_interest(self) -> bool:
        return self.payoff_kind in ("identical_matrix", "identical_tensor")

    def payoff_tensor(self, player: int) -> np.ndarray:
        """Player's payoff over pure profiles, axis i = player i."""
        if self.payoff_kind == "identical_tensor":
            return self.payoffs[0]
        if self.payoff_kind == "identical_matrix":
            return self.payoffs[0]
        return self.payoffs[player]

    def engine_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """(A1, A2) for the two-player engines; identical games share one."""
        if self.players != 2 or self.payoff_kind == "identical_tensor":
            raise ValueError("engine_matrices is for two-player matrix games")
        if self.payoff_kind == "identical_matrix":
            return self.payoffs[0], self.payoffs[0]
        return self.payoffs


def _as_strategy(x, m: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (m,):
        raise ValueError(f"strategy must have shape ({m},)")
    return x


def _check_profile(game: Game, profile) -> list[np.ndarray]:
    if len(profile) != game.players:
        raise ValueError("profile must list one strategy per player")
    return [_as_strategy(x, m) for x, m in zip(profile, game.action_counts)]


def utility_gradient(game: Game, profile, player: int) -> np.ndarray:
    """E[u_player | player plays a], for each action a.

    This is the gradient of the player's expected utility in their own
    strategy, i.e. the utility vector the learners observe.
    """
    xs = _check_profile(game, profile)
    t = game.payoff_tensor(player)
    for i in range(game.players - 1, -1, -1):
        if i == player:
            continue
        t = np.tensordot(t, xs[i], axes=([i], [0]))
    return np.asarray(t, dtype=np.float64)


def expected_utility(game: Game, profile, player: int) -> float:
    """Expected payoff of `player` under a mixed profile."""
    xs = _check_profile(game, profile)
    return float(np.dot(utility_gradient(game, profile, player), xs[player]))


def potential_value(game: Game, profile) -> float:
    """Multilinear potential at a mixed profile.

    Identical-interest games use the common payoff; a matrix_pair needs an
    explicit potential tensor.
    """
    xs = _check_profile(game, profile)
    if game.identical_interest:
        pot = game.payoffs[0]
    elif game.potential is not None:
        pot = game.potential
    else:
        raise ValueError("game has no potential tensor")
    t = pot
    for i in range(game.players - 1, -1, -1):
        t = np.tensordot(t, xs[i], axes=([i], [0]))
    return float(t)


def phi_range(game: Game) -> float:
    """max - min of the potential over pure profiles."""
    if game.identical_interest:
        pot = game.payoffs[0]
    elif game.potential is not None:
        pot = game.potential
    else:
        raise ValueError("game has no potential tensor")
    return float(pot.max() - pot.min())


def nash_gap_vector(game: Game, profile) -> np.ndarray:
    """Per-player best-response gap max_a E[u_i|a] - E[u_i] (all >= 0)."""
    xs = _check_profile(game, profile)
    gaps = np.empty(game.players)
    for i in range(game.players):
        g = utility_gradient(game, profile, i)
        gaps[i] = float(g.max() - np.dot(g, xs[i]))
    return gaps


def nash_gap(game: Game, profile) -> float:
    """Largest unilateral improvement any player can gain by deviating."""
    return float(nash_gap_vector(game, profile).max())


def cce_gap(game: Game, joint: np.ndarray) -> float:
    """Coarse-correlated-equilibrium gap of a joint distribution.

    joint is a tensor over pure profiles (axis i = player i) summing to 1.
    Returns max over players of max_a E_joint[u_i(a, rest)] - E_joint[u_i].
    """
    joint = np.asarray(joint, dtype=np.float64)
    if joint.shape != game.action_counts:
        raise ValueError("joint distribution shape must match profiles")
    worst = 0.0
    for i in range(game.players):
        u = game.payoff_tensor(i)
        base = float(np.sum(joint * u))
        marg = joint.sum(axis=i)
        dev = np.tensordot(
            u,
            marg,
            axes=(
                [ax for ax in range(game.players) if ax != i],
                list(range(game.players - 1)),
            ),
        )
        worst = max(worst, float(np.max(dev) - base))
    return worst


def _integrate_potential(game: Game) -> np.ndarray:
    """Candidate potential by path integration from the all-zero profile."""
    shape = game.action_counts
    n = game.players
    pot = np.zeros(shape)
    for prof in np.ndindex(shape):
        val = 0.0
        cur = [0] * n
        for i in range(n):
            if prof[i] == 0:
                continue
            before = tuple(cur)
            cur[i] = prof[i]
            after = tuple(cur)
            u = game.payoff_tensor(i)
            val += u[after] - u[before]
        pot[prof] = val
    return pot


def verify_potential(game: Game, candidate: np.ndarray | None = None,
                     tol: float = 1e-8) -> tuple[bool, float]:
    """Decide whether the game is an exact potential game.

    Checks every unilateral pure deviation against the candidate potential
    (the stored/integrated one when candidate is None).  Returns
    (is_potential, worst_absolute_violation).
    """
    if game.identical_interest and candidate is None:
        return True, 0.0
    n_prof = int(np.prod(game.action_counts))
    if n_prof > _MAX_ENUM_PROFILES:
        raise ValueError("profile space too large for exhaustive verification")
    if candidate is None:
        candidate = game.potential
    if candidate is None:
        candidate = _integrate_potential(game)
    pot = np.asarray(candidate, dtype=np.float64)
    if pot.shape != game.action_counts:
        raise ValueError("candidate potential has wrong shape")
    worst = 0.0
    for i in range(game.players):
        u = game.payoff_tensor(i)
        m = game.action_counts[i]
        for a in range(m - 1):
            du = np.take(u, a + 1, axis=i) - np.take(u, a, axis=i)
            dp = np.take(pot, a + 1, axis=i) - np.take(pot, a, axis=i)
            v = float(np.max(np.abs(du - dp)))
            if v > worst:
                worst = v
    return worst <= tol, worst


def smoothness_bound(game: Game, norm_family: str = "l1") -> float:
    """Lipschitz constant L of the potential gradient field.

    norm_family "l1": each player's strategy space carries the l1 norm
    (utilities measured in sup norm); for two-player games L = max |P| over
    the potential matrix entries, for n-player binary tensors L = n * max|u|.
    norm_family "l2": two-player games use sigma_max of the potential
    matrix; binary tensors use the conservative constant 2n * max|u|.
    A zero game returns the machine-epsilon floor so 1/L stays finite.
    """
    if norm_family not in ("l1", "l2"):
        raise ValueError("norm_family must be 'l1' or 'l2'")
    if game.identical_interest:
        pot = game.payoffs[0]
    elif game.potential is not None:
        pot = game.potential
    else:
        ok, _ = verify_potential(game)
        if not ok:
            raise ValueError("smoothness bound requires a potential game")
        pot = _integrate_potential(game)
    if game.players == 2:
        if norm_family == "l1":
            val = float(np.max(np.abs(pot)))
        else:
            val = float(np.linalg.svd(pot, compute_uv=False)[0])
    else:
        if any(m != 2 for m in game.action_counts):
            raise ValueError("tensor smoothness implemented for binary games")
        n = game.players
        base = float(np.max(np.abs(pot)))
        val = n * base if norm_family == "l1" else 2 * n * base
    return max(val, float(np.finfo(np.float64).eps))


def random_identical_matrix_game(m1: int, m2: int, rng: np.random.Generator,
                                 scale: float = 1.0) -> Game:
    """Identical-interest 2-player game with iid uniform(-scale, scale) payoffs."""
    A = rng.uniform(-scale, scale, size=(m1, m2))
    return Game(
        payoff_kind="identical_matrix",
        action_counts=(m1, m2),
        payoffs=(A,),
        metadata={"construction": "random_identical", "scale": scale},
    )


def _to_hex(arr: np.ndarray):
    if arr.ndim == 1:
        return [float(v).hex() for v in arr]
    return [_to_hex(sub) for sub in arr]


def _from_hex(data) -> np.ndarray:
    if isinstance(data[0], list):
        return np.array([_from_hex(sub) for sub in data], dtype=np.float64)
    return np.array([float.fromhex(v) for v in data], dtype=np.float64)


def game_to_dict(game: Game) -> dict:
    if game.payoff_kind == "matrix_pair":
        data = [_to_hex(game.payoffs[0]), _to_hex(game.payoffs[1])]
    else:
        data = _to_hex(game.payoffs[0])
    out = {
        "players": game.players,
        "action_counts": list(game.action_counts),
        "payoff_kind": game.payoff_kind,
        "data": data,
        "metadata": game.metadata,
    }
    if game.potential is not None:
        out["potential"] = _to_hex(game.potential)
    return out


def game_from_dict(doc: dict) -> Game:
    kind = doc["payoff_kind"]
    counts = tuple(int(m) for m in doc["action_counts"])
    if kind == "matrix_pair":
        payoffs = (_from_hex(doc["data"][0]), _from_hex(doc["data"][1]))
    else:
        payoffs = (_from_hex(doc["data"]),)
    pot = _from_hex(doc["potential"]) if "potential" in doc else None
    game = Game(
        payoff_kind=kind,
        action_counts=counts,
        payoffs=payoffs,
        potential=pot,
        metadata=doc.get("metadata", {}),
    )
    if game.players != int(doc["players"]):
        raise ValueError("player count does not match action_counts")
    return game


def save_game(game: Game, path) -> None:
    Path(path).write_text(json.dumps(game_to_dict(game), indent=1))


def load_game(path) -> Game:
    return game_from_dict(json.loads(Path(path).read_text()))
