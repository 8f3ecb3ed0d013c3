"""Game families with provably slow learning dynamics.

Three constructions live here:

* Spiral matrices B_{m,r} (m even): nonnegative matrices whose nonzero
  entries r+1, ..., r+2m-1 wind from the top-left corner inward.  Best
  responses to them chase the spiral one entry at a time.
* Padded matrices A_m(gamma) (m odd): a spiral B_{m-1,2} sits in the leading
  block, and one extra row/column of strongly negative entries makes the
  uniform starting point fall into the spiral's entrance.  The identical
  interest game (A, A) forces FTRL through all 2m-4 transition periods.
  A payoff-normalized variant keeps every entry in [-1, 1] at the cost of
  ceil(gamma1) extra actions.
* Snake games: n-player binary identical-interest games whose payoff is
  positive exactly on an induced path of the hypercube (a "snake in the
  box"), increasing along it.  Fictitious play must crawl the whole snake.

Rows, columns and payoff positions are 1-based in docstrings and in
serialized metadata, matching the file-format convention; code indexes from
zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .games import Game


def spiral_matrix(m: int, r: int = 0) -> np.ndarray:
    """The spiral matrix B_{m,r} for even m >= 2 and offset r >= 0.

    The base case is B_{2,r} = [[r+1, 0], [r+2, r+3]].  For larger m the
    outer frame holds r+1 at (1,1), r+2 at (m,1), r+3 at (m,m) and r+4 at
    (2,m), the interior block rows/columns 2..m-1 holds B_{m-2,r+4}, and all
    other entries are zero.  The nonzero entries are exactly r+1, ..., r+2m-1,
    each appearing once.

    >>> spiral_matrix(4, 2)
    array([[3., 0., 0., 0.],
           [0., 7., 0., 6.],
           [0., 8., 9., 0.],
           [4., 0., 0., 5.]])
    """
    if m < 2 or m % 2 != 0:
        raise ValueError("spiral matrices need even m >= 2")
    if r < 0 or r != int(r):
        raise ValueError("offset r must be a nonnegative integer")
    B = np.zeros((m, m))
    lo, size, base = 0, m, int(r)
    while size > 2:
        hi = lo + size - 1
        B[lo, lo] = base + 1
        B[hi, lo] = base + 2
        B[hi, hi] = base + 3
        B[lo + 1, hi] = base + 4
        base += 4
        lo += 1
        size -= 2
    B[lo, lo] = base + 1
    B[lo + 1, lo] = base + 2
    B[lo + 1, lo + 1] = base + 3
    return B


def locator(entries: np.ndarray, k: int) -> tuple[int, int]:
    """1-based (row, column) of the unique entry equal to k.

    >>> locator(spiral_matrix(4, 2), 9)
    (3, 3)
    """
    hits = np.argwhere(entries == float(k))
    if len(hits) != 1:
        raise ValueError(f"payoff {k} appears {len(hits)} times, expected once")
    i, j = hits[0]
    return int(i) + 1, int(j) + 1


def locator_table(entries: np.ndarray) -> dict[int, tuple[int, int]]:
    """Locators for every positive integer entry, keyed by payoff value."""
    out = {}
    for i, j in np.argwhere(entries > 0.0):
        out[int(entries[i, j])] = (int(i) + 1, int(j) + 1)
    return dict(sorted(out.items()))


@dataclass(frozen=True)
class PaddedMatrix:
    """A padded spiral matrix together with its payoff locators.

    entries is the full (m, m) matrix; locators maps each spiral payoff
    k in {3, ..., 2m-1} to its 1-based (row, column).  delta is the
    period-detection threshold 1/(4m).
    """

    m: int
    gamma: float
    entries: np.ndarray
    locators: dict[int, tuple[int, int]]

    @property
    def delta(self) -> float:
        return 1.0 / (4 * self.m)

    @property
    def k_max(self) -> int:
        return 2 * self.m - 1

    def metadata(self) -> dict:
        return {
            "construction": "padded",
            "m": self.m,
            "gamma": self.gamma,
            "gamma_hex": float(self.gamma).hex(),
            "delta": self.delta,
            "locators": {str(k): list(v) for k, v in self.locators.items()},
        }

    def game(self) -> Game:
        """The identical-interest game (A, A)."""
        return Game(
            payoff_kind="identical_matrix",
            action_counts=(self.m, self.m),
            payoffs=(self.entries,),
            metadata=self.metadata(),
        )


def padded_matrix(m: int, gamma: float) -> PaddedMatrix:
    """Embed B_{m-1,2} into an m x m matrix with a penalty row and column.

    For odd m >= 5 the leading (m-1) x (m-1) block is B := B_{m-1,2}; the
    last column holds -sum(row 1 of B) at row 1 and -gamma - sum(row a1 of B)
    for 2 <= a1 <= m-1; the last row mirrors this with column sums; entry
    (m, m) is -2*gamma.  Every column of A then sums to 0 (column 1), -gamma
    (middle columns) or -m*gamma - sum(B) (column m), so against a uniform
    opponent action 1 is optimal, middle actions trail by gamma/m and action
    m by at least gamma.  The same holds for rows by symmetry.
    """
    if m < 5 or m % 2 == 0:
        raise ValueError("padded matrices need odd m >= 5")
    if not (gamma > 0.0 and math.isfinite(gamma)):
        raise ValueError("gamma must be positive and finite")
    B = spiral_matrix(m - 1, 2)
    row_sums = B.sum(axis=1)
    col_sums = B.sum(axis=0)
    A = np.zeros((m, m))
    A[: m - 1, : m - 1] = B
    A[0, m - 1] = -row_sums[0]
    A[m - 1, 0] = -col_sums[0]
    for i in range(1, m - 1):
        A[i, m - 1] = -gamma - row_sums[i]
        A[m - 1, i] = -gamma - col_sums[i]
    A[m - 1, m - 1] = -2.0 * gamma
    return PaddedMatrix(m=m, gamma=float(gamma), entries=A,
                        locators=locator_table(B))


def gamma_init(m: int, alpha: float, reg_range: float) -> float:
    """Smallest round-1 gap scale that the slow-traversal analysis needs.

    With delta = 1/(4m) and R the regularizer range, returns

        max( 4 m^3 R,
             2 (64 R m / delta)^(1/(1-alpha)),
             (R m / delta)^(1/(1-alpha)) * alpha^(alpha/(1-alpha)) * (1-alpha) )

    where alpha^(alpha/(1-alpha)) is taken as 1 at alpha = 0.
    """
    if m < 2:
        raise ValueError("need m >= 2")
    if not (0.0 <= alpha < 1.0):
        raise ValueError("alpha must lie in [0, 1)")
    if not (reg_range > 0.0 and math.isfinite(reg_range)):
        raise ValueError("reg_range must be positive and finite")
    delta = 1.0 / (4 * m)
    e = 1.0 / (1.0 - alpha)
    t1 = 4.0 * m**3 * reg_range
    t2 = 2.0 * (64.0 * reg_range * m / delta) ** e
    apow = 1.0 if alpha == 0.0 else alpha ** (alpha / (1.0 - alpha))
    t3 = ((reg_range * m / delta) ** e) * apow * (1.0 - alpha)
    return max(t1, t2, t3)


def padded_game(m: int, gamma: float | None = None, alpha: float = 0.0,
                reg_range: float | None = None) -> Game:
    """Convenience wrapper: padded_matrix(...).game() with optional auto gamma.

    When gamma is None it is set to gamma_init(m, alpha, R) with R defaulting
    to log(m), the entropy range.
    """
    if gamma is None:
        R = math.log(m) if reg_range is None else reg_range
        gamma = gamma_init(m, alpha, R)
    return padded_matrix(m, gamma).game()


def normalized_padded_size(m: int, alpha: float = 0.0,
                           reg_range: float | None = None) -> int:
    """Action count of the normalized variant: m - 1 + ceil(gamma1)."""
    R = math.log(m) if reg_range is None else reg_range
    return m - 1 + math.ceil(gamma_init(m, alpha, R))


def normalized_padded_game(m: int, alpha: float = 0.0,
                           reg_range: float | None = None,
                           max_actions: int = 4096) -> Game:
    """Variant of the padded game with all payoffs in [-1, 1].

    The spiral block is rescaled to B_{m-1,2}/(2m-1) and, instead of one
    high-magnitude penalty row/column, ceil(gamma1) rows and columns are
    appended with every new entry -1, except that the first entry of each
    added row and of each added column is 0.  gamma1 = gamma_init(m, alpha,
    R).  The action count grows to m - 1 + ceil(gamma1), so a cap guards
    against accidentally huge allocations.
    """
    R = math.log(m) if reg_range is None else reg_range
    if m < 5 or m % 2 == 0:
        raise ValueError("normalized padded matrices need odd m >= 5")
    g1 = gamma_init(m, alpha, R)
    size = m - 1 + math.ceil(g1)
    if size > max_actions:
        raise ValueError(
            f"normalized matrix would need {size} actions "
            f"(cap {max_actions}); raise max_actions explicitly if intended"
        )
    scale = float(2 * m - 1)
    B = spiral_matrix(m - 1, 2)
    A = np.full((size, size), -1.0)
    A[: m - 1, : m - 1] = B / scale
    A[0, m - 1 :] = 0.0
    A[m - 1 :, 0] = 0.0
    meta = {
        "construction": "normalized_padded",
        "m": m,
        "alpha": alpha,
        "reg_range": R,
        "gamma1": g1,
        "gamma1_hex": float(g1).hex(),
        "scale": scale,
        "size": size,
        "locators": {str(k): list(v) for k, v in locator_table(B).items()},
    }
    return Game(
        payoff_kind="identical_matrix",
        action_counts=(size, size),
        payoffs=(A,),
        metadata=meta,
    )


@dataclass(frozen=True)
class SnakePath:
    """An induced path in the n-cube.

    vertices are bitmasks; bit i is player i+1's action.  Serialized
    bitstrings list bit 0 first, so string position j is player j+1.
    """

    dimension: int
    vertices: tuple[int, ...]

    @property
    def length(self) -> int:
        """Number of edges."""
        return len(self.vertices) - 1

    def bitstrings(self) -> list[str]:
        n = self.dimension
        return ["".join(str((v >> i) & 1) for i in range(n))
                for v in self.vertices]

    @staticmethod
    def from_bitstrings(strings: list[str]) -> "SnakePath":
        n = len(strings[0])
        verts = []
        for s in strings:
            if len(s) != n or any(c not in "01" for c in s):
                raise ValueError(f"bad vertex bitstring {s!r}")
            verts.append(sum((1 << i) for i, c in enumerate(s) if c == "1"))
        return SnakePath(dimension=n, vertices=tuple(verts))


def verify_snake(path: SnakePath) -> bool:
    """True iff consecutive vertices are adjacent and the path is induced.

    Induced means no two non-consecutive vertices are hypercube neighbors
    (and all vertices are distinct), so the only payoff-improving single-bit
    deviations are the path edges themselves.
    """
    vs = path.vertices
    if len(set(vs)) != len(vs):
        return False
    if any(v < 0 or v >= (1 << path.dimension) for v in vs):
        return False
    for a, b in zip(vs, vs[1:]):
        if bin(a ^ b).count("1") != 1:
            return False
    for i in range(len(vs)):
        for j in range(i + 2, len(vs)):
            if bin(vs[i] ^ vs[j]).count("1") == 1:
                return False
    return True


def find_snake(n: int, budget: int | None = None) -> SnakePath:
    """Longest induced path in the n-cube found by exhaustive DFS.

    The search is made deterministic and symmetry-reduced: it starts at the
    all-zeros vertex, the first move flips bit 1, candidate bits at every
    step are tried in increasing order, and a bit may only be introduced
    once all lower bits have appeared (coordinate permutations of the cube
    make any snake reducible to this form, so maximality is preserved).

    budget caps the number of DFS node expansions; None means exhaustive.
    If the budget runs out, the longest path found so far is returned
    provided it has length >= n, otherwise RuntimeError is raised.  For
    n <= 6 the exhaustive search is feasible; known maximal lengths start
    2, 4, 7, 13 for n = 2..5.
    """
    if n < 2:
        raise ValueError("need dimension n >= 2")
    if n > 20:
        raise ValueError("dimension too large for dense search tables")
    size = 1 << n
    visited = bytearray(size)
    cnt = [0] * size
    path = [0, 1]
    visited[0] = visited[1] = 1
    for b in range(n):
        cnt[1 ^ (1 << b)] += 1
        cnt[0 ^ (1 << b)] += 1
    best = [0, 1]
    expansions = 0
    exhausted = False

    def extend(cur: int, max_bit: int) -> None:
        nonlocal expansions, exhausted, best
        if exhausted:
            return
        expansions += 1
        if budget is not None and expansions > budget:
            exhausted = True
            return
        top = min(max_bit + 1, n - 1)
        for b in range(top + 1):
            w = cur ^ (1 << b)
            if visited[w] or cnt[w] != 1:
                continue
            visited[w] = 1
            for bb in range(n):
                cnt[w ^ (1 << bb)] += 1
            path.append(w)
            if len(path) > len(best):
                best = path.copy()
            extend(w, max(max_bit, b))
            path.pop()
            for bb in range(n):
                cnt[w ^ (1 << bb)] -= 1
            visited[w] = 0

    extend(1, 0)
    if exhausted and len(best) - 1 < n:
        raise RuntimeError(
            f"snake search budget {budget} exhausted before reaching "
            f"length {n} (best found: {len(best) - 1})"
        )
    return SnakePath(dimension=n, vertices=tuple(best))


def snake_game(path: SnakePath) -> Game:
    """Identical-interest binary game paying position-on-path, 0 off path.

    The j-th path vertex (1-based) pays j, so the final vertex is the unique
    global maximum and the unique pure Nash equilibrium; at every other
    on-path profile exactly one player can improve, by exactly 1, by moving
    to the next vertex.
    """
    if not verify_snake(path):
        raise ValueError("vertices do not form an induced hypercube path")
    n = path.dimension
    u = np.zeros((2,) * n)
    for pos, v in enumerate(path.vertices, start=1):
        idx = tuple((v >> i) & 1 for i in range(n))
        u[idx] = float(pos)
    return Game(
        payoff_kind="identical_tensor",
        action_counts=(2,) * n,
        payoffs=(u,),
        metadata={
            "construction": "snake",
            "n": n,
            "length": path.length,
            "path": path.bitstrings(),
        },
    )
