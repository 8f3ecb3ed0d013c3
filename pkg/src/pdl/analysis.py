"""Trajectory verification: gap series, period segmentation, lemma checkers.

Every checker is a pure function from a finished run (or its segmentation)
to a CheckReport; the same trajectory always produces the same report.
Checks that need consecutive rounds (one-step improvement, potential
monotonicity, path length) evaluate only record pairs at adjacent rounds,
so they are exhaustive on dense telemetry (record_every=1) and sampled on
thinned telemetry.  Inequality tolerances are pinned per check and recorded
in the report details.

Reports distinguish hard failures (the artifact or the inequality is wrong)
from informative outcomes (e.g. a monotonicity check on a learning rate
outside the guaranteed regime).  Censored quantities (a dwell still open at
the horizon) are used only in the direction where censoring is safe: a
lower bound that already holds for the censored value holds for the true
one, while a failure on a censored value is reported as inconclusive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .games import (
    nash_gap_vector,
    phi_range,
    potential_value,
    smoothness_bound,
)
from .regularizers import reg_range
from .dynamics import RunResult, StreamResult


@dataclass
class CheckReport:
    """Outcome of one verification pass.

    ``worst`` is the largest violation magnitude encountered (0 when the
    check passed with slack); ``witnesses`` lists up to ten offending
    rounds/labels; ``hard`` marks checks whose failure should fail a
    pipeline (informative checks set it False).
    """

    name: str
    passed: bool
    worst: float = 0.0
    witnesses: list = field(default_factory=list)
    details: dict = field(default_factory=dict)
    hard: bool = True

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "worst": self.worst,
            "witnesses": self.witnesses,
            "details": self.details,
            "hard": self.hard,
        }


_MAX_WITNESSES = 10


@dataclass
class PeriodSegmentation:
    """Transition periods of a padded-matrix trajectory.

    dwells maps each completed period k to its length T_k; the final
    observed period is always censored by the horizon and reported
    separately.  ``consistent`` is True when the observed indices form the
    contiguous sequence 3, 4, ... with no detector violations.
    """

    delta: float
    k_values: list
    start_rounds: dict
    dwells: dict
    censored_k: int | None
    censored_dwell: int | None
    horizon: int
    violations: dict
    consistent: bool

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "k_values": list(self.k_values),
            "start_rounds": {str(k): v for k, v in self.start_rounds.items()},
            "dwells": {str(k): v for k, v in self.dwells.items()},
            "censored_k": self.censored_k,
            "censored_dwell": self.censored_dwell,
            "horizon": self.horizon,
            "violations": self.violations,
            "consistent": self.consistent,
        }


def _segmentation_from_starts(starts: dict, horizon: int, delta: float,
                              violations: dict) -> PeriodSegmentation:
    ks = sorted(starts)
    dwells = {}
    for a, b in zip(ks, ks[1:]):
        dwells[a] = starts[b] - starts[a]
    censored_k = ks[-1] if ks else None
    censored_dwell = horizon - starts[ks[-1]] + 1 if ks else None
    consistent = (
        bool(ks)
        and ks == list(range(ks[0], ks[0] + len(ks)))
        and ks[0] == 3
        and violations.get("count", 0) == 0
    )
    return PeriodSegmentation(
        delta=delta,
        k_values=ks,
        start_rounds=dict(starts),
        dwells=dwells,
        censored_k=censored_k,
        censored_dwell=censored_dwell,
        horizon=horizon,
        violations=dict(violations),
        consistent=consistent,
    )


def segmentation_from_run(result: RunResult) -> PeriodSegmentation:
    """Exact segmentation from the engine's in-run period tracker."""
    ps = result.period_state
    if ps is None:
        raise ValueError("run has no period tracking state")
    return _segmentation_from_starts(
        {int(k): int(v) for k, v in ps["start_rounds"].items()},
        ps["rounds"], ps["delta"], ps["violations"],
    )


def _locators_from_meta(meta: dict):
    m = int(meta["m"])
    k_max = 2 * m - 1
    delta = float(meta.get("delta", 1.0 / (4 * m)))
    loc_r = np.empty(k_max - 2, dtype=np.int64)
    loc_c = np.empty(k_max - 2, dtype=np.int64)
    for k in range(3, k_max + 1):
        r, c = meta["locators"][str(k)]
        loc_r[k - 3] = int(r) - 1
        loc_c[k - 3] = int(c) - 1
    return m, k_max, delta, loc_r, loc_c


def detect_periods(records, game, delta: float | None = None) -> PeriodSegmentation:
    """Assign each recorded round the largest period whose clause holds.

    Round 1 is period 3 by convention.  A recorded round satisfying no
    clause, or jumping backward, counts as a violation.  Start rounds are
    the first recorded rounds of each index, which matches the true
    boundaries only on dense telemetry; the in-run tracker
    (:func:`segmentation_from_run`) is exact under any thinning.
    """
    meta = game.metadata
    m, k_max, meta_delta, loc_r, loc_c = _locators_from_meta(meta)
    if delta is None:
        delta = meta_delta
    starts = {}
    violations = {"count": 0, "first_round": None, "first_label": None}

    def flag(t, label):
        violations["count"] += 1
        if violations["first_round"] is None:
            violations["first_round"] = t
            violations["first_label"] = label

    cur = None
    horizon = 0
    for r in records:
        horizon = max(horizon, r.round)
        if r.round == 1:
            k = 3
        else:
            k = -1
            for cand in range(k_max, 3, -1):
                if K.period_clause(cand, r.strategies[0], r.strategies[1],
                                   loc_r, loc_c, delta):
                    k = cand
                    break
        if k == -1 or (cur is not None and k < cur):
            flag(r.round, k)
            continue
        if cur is not None and k > cur + 1:
            flag(r.round, k)
        if k not in starts:
            starts[k] = r.round
        cur = k
    return _segmentation_from_starts(starts, horizon, delta, violations)


def gap_series(records, player: int):
    """(rounds, gaps) with gaps[t, a] = max_a' U[a'] - U[a] per recorded round."""
    rounds = np.array([r.round for r in records], dtype=np.int64)
    U = np.stack([r.cumulatives[player] for r in records])
    return rounds, U.max(axis=1, keepdims=True) - U


# ---------------------------------------------------------------------------
# Shared record plumbing.


def _adjacent_pairs(records):
    """Indices i with records[i+1].round == records[i].round + 1."""
    rounds = np.array([r.round for r in records], dtype=np.int64)
    if rounds.shape[0] < 2:
        return np.array([], dtype=np.int64)
    return np.nonzero(rounds[1:] == rounds[:-1] + 1)[0]


def _norm_sq(dx: np.ndarray, norm: str) -> np.ndarray:
    # dx has shape (N, m); returns per-row squared norm.
    if norm == "l1":
        s = np.abs(dx).sum(axis=1)
        return s * s
    return (dx * dx).sum(axis=1)


def _stack_player(records, player: int, field_name: str) -> np.ndarray:
    return np.stack([getattr(r, field_name)[player] for r in records])


def _potentials(result: RunResult) -> np.ndarray:
    game = result.game
    records = result.records
    if game.payoff_kind == "identical_matrix":
        A = game.payoffs[0]
        X1 = _stack_player(records, 0, "strategies")
        X2 = _stack_player(records, 1, "strategies")
        return np.einsum("ni,ij,nj->n", X1, A, X2)
    return np.array([potential_value(game, list(r.strategies)) for r in records])


def _nash_gaps(result: RunResult) -> np.ndarray:
    """Per-record max-over-players Nash gap (vectorized on matrix games)."""
    game = result.game
    records = result.records
    if game.payoff_kind == "identical_matrix":
        A = game.payoffs[0]
        X1 = _stack_player(records, 0, "strategies")
        X2 = _stack_player(records, 1, "strategies")
        G1 = X2 @ A.T
        G2 = X1 @ A
        vals = np.einsum("ni,ni->n", X1, G1)
        gap1 = G1.max(axis=1) - vals
        gap2 = G2.max(axis=1) - np.einsum("nj,nj->n", X2, G2)
        return np.maximum(gap1, gap2)
    return np.array([
        float(nash_gap_vector(game, list(r.strategies)).max()) for r in records
    ])


def _next_strategy(spec, U: np.ndarray, eta: float, out: np.ndarray) -> None:
    q = float(spec.q) if spec.q is not None else 0.0
    resid = K.solve_simplex(spec.code, q, U, eta, out)
    if resid > K.SUM_TOL:
        raise RuntimeError(f"solver residual {resid:.3e} while re-deriving "
                           "a recorded strategy")


def _trim(witnesses):
    return witnesses[:_MAX_WITNESSES]


def _constant_rate(cfg) -> float | None:
    """The constant learning rate, or None when the schedule varies."""
    if cfg.eta is not None:
        return float(cfg.eta)
    if cfg.alpha == 0.0:
        return 1.0
    return None


# ---------------------------------------------------------------------------
# FTRL structure checks.


def check_improvement(result: RunResult, tol: float = 1e-8) -> CheckReport:
    """One-step improvement: <x_(t+1) - x_t, u_t> >= ||dx||^2 / eta_t.

    The norm is the regularizer's strong-convexity norm.  Evaluated on
    every adjacent-round record pair, for every player (non-moving players
    contribute dx = 0 and pass vacuously).

    The inequality is a theorem only for the canonical sequence: every
    player re-solves each round with one new utility vector and an
    unchanged learning rate.  Alternating and lazy runs play stale
    iterates, and a decaying schedule perturbs the two objectives the
    proof compares, so those runs are reported informatively.
    """
    cfg = result.config
    spec = cfg.regularizer
    records = result.records
    guaranteed = (
        cfg.update_mode == "simultaneous"
        and cfg.lazy_epsilon is None
        and _constant_rate(cfg) is not None
    )
    idx = _adjacent_pairs(records)
    worst = 0.0
    witnesses = []
    checked = 0
    if idx.shape[0] > 0:
        etas = np.array([records[i].eta for i in idx])
        for p in range(result.game.players):
            X = _stack_player(records, p, "strategies")
            Uvec = _stack_player(records, p, "utilities")
            dx = X[idx + 1] - X[idx]
            gain = np.einsum("nj,nj->n", dx, Uvec[idx])
            need = _norm_sq(dx, spec.norm) / etas
            viol = need - gain
            checked += viol.shape[0]
            bad = np.nonzero(viol > tol)[0]
            if bad.shape[0]:
                for b in bad:
                    witnesses.append({"round": int(records[idx[b]].round),
                                      "player": p + 1,
                                      "violation": float(viol[b])})
            worst = max(worst, float(viol.max(initial=0.0)))
    return CheckReport(
        name="ftrl_improvement",
        passed=worst <= tol,
        worst=worst,
        witnesses=_trim(witnesses),
        details={"pairs": checked, "tol": tol, "norm": spec.norm,
                 "guaranteed_regime": guaranteed},
        hard=guaranteed,
    )


def check_potential_monotone(result: RunResult, tol: float = 1e-8) -> CheckReport:
    """Potential ascent along the trajectory.

    Simultaneous updates with constant eta <= 1/L must gain at least
    sum_i ||dx_i||^2 / (2 eta) per round.  Lazy alternating updates never
    decrease the potential: an adopted move is unilateral, so it shifts the
    potential by exactly the gain the filter required.  Plain alternating
    updates optimize a cumulative objective that can point away from the
    current gradient, and small decreases do occur, so those runs (and
    simultaneous runs above 1/L) are reported informatively rather than
    as hard failures.
    """
    cfg = result.config
    spec = cfg.regularizer
    game = result.game
    records = result.records
    idx = _adjacent_pairs(records)
    alternating = cfg.update_mode == "alternating"
    lazy = cfg.lazy_epsilon is not None
    L = smoothness_bound(game, spec.norm)
    rate = _constant_rate(cfg)
    guaranteed = (alternating and lazy) or (
        not alternating and not lazy and rate is not None and rate <= 1.0 / L
    )

    worst = 0.0
    witnesses = []
    if idx.shape[0] > 0:
        phi = _potentials(result)
        dphi = phi[idx + 1] - phi[idx]
        if alternating:
            need = np.zeros_like(dphi)
        else:
            etas = np.array([records[i].eta for i in idx])
            need = np.zeros_like(dphi)
            for p in range(game.players):
                X = _stack_player(records, p, "strategies")
                dx = X[idx + 1] - X[idx]
                need += _norm_sq(dx, spec.norm)
            need /= 2.0 * etas
        viol = need - dphi
        worst = float(viol.max(initial=0.0))
        for b in np.nonzero(viol > tol)[0]:
            witnesses.append({"round": int(records[idx[b]].round),
                              "violation": float(viol[b])})
    return CheckReport(
        name="potential_monotone",
        passed=worst <= tol,
        worst=worst,
        witnesses=_trim(witnesses),
        details={
            "pairs": int(idx.shape[0]),
            "tol": tol,
            "smoothness": L,
            "eta": rate,
            "guaranteed_regime": guaranteed,
            "mode": cfg.update_mode,
        },
        hard=guaranteed,
    )


def check_path_length(result: RunResult, tol: float = 1e-6) -> CheckReport:
    """Second-order path bound sum_t sum_i ||dx_i||^2 <= 2 eta Phi_range.

    The bound telescopes the per-round potential gain, so it needs dense
    records over the full horizon and simultaneous non-lazy updates at a
    constant rate; otherwise the report passes vacuously with a note.  It
    is a hard guarantee only at eta <= 1/L, and informative above.
    """
    cfg = result.config
    spec = cfg.regularizer
    records = result.records
    rounds = [r.round for r in records]
    dense = rounds == list(range(1, result.rounds + 1))
    rate = _constant_rate(cfg)
    applicable = (
        dense and rate is not None
        and cfg.update_mode == "simultaneous" and cfg.lazy_epsilon is None
    )
    if not applicable:
        return CheckReport(
            name="path_length",
            passed=True,
            details={"applicable": False,
                     "reason": "needs dense records and simultaneous "
                               "non-lazy updates at a constant rate"},
        )
    idx = _adjacent_pairs(records)
    total = 0.0
    for p in range(result.game.players):
        X = _stack_player(records, p, "strategies")
        dx = X[idx + 1] - X[idx]
        total += float(_norm_sq(dx, spec.norm).sum())
    L = smoothness_bound(result.game, spec.norm)
    bound = 2.0 * rate * phi_range(result.game) + tol
    return CheckReport(
        name="path_length",
        passed=total <= bound,
        worst=max(0.0, total - bound),
        details={"path_sum": total, "bound": bound, "tol": tol,
                 "applicable": True, "smoothness": L,
                 "guaranteed_regime": rate <= 1.0 / L},
        hard=rate <= 1.0 / L,
    )


def check_gap_probability(result: RunResult, tol: float = 1e-12) -> CheckReport:
    """x_(t+1)[a] <= R / (eta_t * Gap_t[a]) for every positive-gap action.

    The next-round strategy is re-derived from the recorded cumulative
    vector with the recorded learning rate, bit-identically to the engine.
    The log regularizer's truncated-simplex floor is added to its bound.
    """
    spec = result.config.regularizer
    records = result.records
    floor = K.LOG_FLOOR if spec.kind == "log" else 0.0
    worst = 0.0
    witnesses = []
    checked = 0
    bufs = [np.empty(m) for m in result.game.action_counts]
    ranges = [reg_range(spec, m) for m in result.game.action_counts]
    for r in records:
        for p in range(len(bufs)):
            U = r.cumulatives[p]
            gaps = U.max() - U
            _next_strategy(spec, U, r.eta, bufs[p])
            pos = gaps > 0.0
            checked += int(pos.sum())
            if not pos.any():
                continue
            bound = ranges[p] / (r.eta * gaps[pos]) + floor + tol
            viol = bufs[p][pos] - bound
            v = float(viol.max(initial=-np.inf))
            if v > worst:
                worst = v
            if v > 0.0:
                witnesses.append({"round": r.round, "player": p + 1,
                                  "violation": v})
    worst = max(worst, 0.0)
    return CheckReport(
        name="gap_probability",
        passed=not witnesses,
        worst=worst,
        witnesses=_trim(witnesses),
        details={"actions_checked": checked, "tol": tol,
                 "log_floor": floor},
    )


def check_order_preservation(result: RunResult, tol: float = 1e-12) -> CheckReport:
    """Higher cumulative utility never gets lower next-round probability.

    Ties are declared within the tolerance and exempt.
    """
    spec = result.config.regularizer
    records = result.records
    worst = 0.0
    witnesses = []
    bufs = [np.empty(m) for m in result.game.action_counts]
    for r in records:
        for p in range(len(bufs)):
            U = r.cumulatives[p]
            _next_strategy(spec, U, r.eta, bufs[p])
            x = bufs[p]
            du = U[:, None] - U[None, :]
            dx = x[:, None] - x[None, :]
            mask = du > tol
            if not mask.any():
                continue
            v = float((-dx[mask] - tol).max(initial=-np.inf))
            if v > worst:
                worst = v
            if v > 0.0:
                witnesses.append({"round": r.round, "player": p + 1,
                                  "violation": v})
    worst = max(worst, 0.0)
    return CheckReport(
        name="order_preservation",
        passed=not witnesses,
        worst=worst,
        witnesses=_trim(witnesses),
        details={"records": len(records), "tol": tol},
    )


def check_regret_bound(result: RunResult, tol: float = 1e-6) -> CheckReport:
    """Reg_(t) <= R / eta_t + sum_tau eta_tau ||u_tau||_*^2 at every record.

    The dual-norm series is the engine's compensated accumulator; the
    regret uses the recorded cumulative utilities and realized sums.
    Lazy runs deliberately keep stale strategies, and their played regret
    can grow linearly (the termination analysis treats small regret as a
    premise, not a guarantee), so they are reported informatively.
    """
    spec = result.config.regularizer
    records = result.records
    guaranteed = result.config.lazy_epsilon is None
    worst = 0.0
    witnesses = []
    for r in records:
        for p in range(result.game.players):
            R = reg_range(spec, result.game.action_counts[p])
            reg = float(r.cumulatives[p].max()) - r.sums_played[p]
            bound = R / r.eta + r.bounds[p] + tol
            v = reg - bound
            if v > worst:
                worst = v
            if v > 0.0:
                witnesses.append({"round": r.round, "player": p + 1,
                                  "violation": v})
    worst = max(worst, 0.0)
    return CheckReport(
        name="regret_bound",
        passed=not witnesses,
        worst=worst,
        witnesses=_trim(witnesses),
        details={"records": len(records), "tol": tol,
                 "guaranteed_regime": guaranteed},
        hard=guaranteed,
    )


def check_stream_regret(stream: StreamResult, spec, m: int,
                        tol: float = 1e-6) -> CheckReport:
    """Regret bound for a single-learner stream run."""
    bound = reg_range(spec, m) / stream.eta_final + stream.bound_sum + tol
    v = stream.regret - bound
    return CheckReport(
        name="stream_regret_bound",
        passed=v <= 0.0,
        worst=max(v, 0.0),
        details={"regret": stream.regret, "bound": bound, "tol": tol},
    )


# ---------------------------------------------------------------------------
# Padded-construction checks.


def check_period_consistency(seg: PeriodSegmentation) -> CheckReport:
    """Observed periods are 3, 4, 5, ... with no skips or detector misses."""
    return CheckReport(
        name="period_consistency",
        passed=seg.consistent,
        worst=float(seg.violations.get("count", 0)),
        witnesses=(
            [] if seg.consistent
            else [{"first_round": seg.violations.get("first_round"),
                   "first_label": seg.violations.get("first_label"),
                   "k_values": seg.k_values}]
        ),
        details={"k_values": seg.k_values,
                 "violations": seg.violations},
    )


def check_period_recursion(seg: PeriodSegmentation,
                           gamma1: float | None = None,
                           m: int | None = None) -> CheckReport:
    """Dwell-time lower bounds along the traversal.

    Checks, for every period with the needed dwells observed:
      * T_k + T_(k-1) >= (1/2) sum_(l=4..k-2) (l-2) T_l  for k >= 6;
      * T_4 >= gamma1 / 2 when gamma1 is given;
      * T_(2m-3) + T_(2m-4) >= (gamma1/4) ((m-3)/e)^(m-3) when both are
        given (the exponential-growth consequence of the recursion).

    The final period's dwell is censored by the horizon; inequalities that
    already hold with the censored value are conclusive passes, failures
    involving it are reported as inconclusive rather than failures.
    """
    dwell = dict(seg.dwells)
    censored = {}
    if seg.censored_k is not None:
        censored[seg.censored_k] = seg.censored_dwell

    def have(k):
        return k in dwell or k in censored

    def value(k):
        return dwell.get(k, censored.get(k))

    failures = []
    inconclusive = []
    checks = {}

    ks = sorted(set(list(dwell) + list(censored)))
    for k in ks:
        if k < 6 or not (have(k) and have(k - 1)):
            continue
        if any(not have(l) or l in censored for l in range(4, k - 1)):
            continue
        lhs = value(k) + value(k - 1)
        rhs = 0.5 * sum((l - 2) * dwell[l] for l in range(4, k - 1))
        ok = lhs >= rhs
        checks[f"recursion_k{k}"] = {"lhs": lhs, "rhs": rhs, "ok": ok,
                                     "censored": k in censored}
        if not ok:
            (inconclusive if k in censored else failures).append(
                {"check": f"recursion_k{k}", "lhs": lhs, "rhs": rhs})

    if gamma1 is not None and have(4):
        lhs = value(4)
        rhs = gamma1 / 2.0
        ok = lhs >= rhs
        checks["dwell4_floor"] = {"lhs": lhs, "rhs": rhs, "ok": ok,
                                  "censored": 4 in censored}
        if not ok:
            (inconclusive if 4 in censored else failures).append(
                {"check": "dwell4_floor", "lhs": lhs, "rhs": rhs})

    if gamma1 is not None and m is not None:
        k1, k0 = 2 * m - 3, 2 * m - 4
        if have(k1) and have(k0):
            lhs = value(k1) + value(k0)
            rhs = (gamma1 / 4.0) * ((m - 3) / math.e) ** (m - 3)
            cens = k1 in censored or k0 in censored
            ok = lhs >= rhs
            checks["exponential_tail"] = {"lhs": lhs, "rhs": rhs, "ok": ok,
                                          "censored": cens}
            if not ok:
                (inconclusive if cens else failures).append(
                    {"check": "exponential_tail", "lhs": lhs, "rhs": rhs})

    worst = 0.0
    for f in failures:
        worst = max(worst, f["rhs"] - f["lhs"])
    return CheckReport(
        name="period_recursion",
        passed=not failures,
        worst=worst,
        witnesses=_trim(failures),
        details={"checks": checks, "inconclusive": inconclusive,
                 "dwells": dwell, "censored": censored, "gamma1": gamma1},
    )


def check_nash_gap_floor(result: RunResult, m: int | None = None,
                         tol: float = 1e-10) -> CheckReport:
    """Nash gap >= 1/(8m) at every recorded round of periods 3..2m-2."""
    if m is None:
        m = int(result.game.metadata["m"])
    floor = 1.0 / (8 * m)
    k_cap = 2 * m - 2
    records = result.records
    gaps = _nash_gaps(result)
    worst = 0.0
    witnesses = []
    checked = 0
    for r, g in zip(records, gaps):
        if r.period is None or not (3 <= r.period <= k_cap):
            continue
        checked += 1
        v = floor - float(g) - tol
        if v > worst:
            worst = v
        if v > 0.0:
            witnesses.append({"round": r.round, "period": r.period,
                              "nash_gap": float(g)})
    return CheckReport(
        name="nash_gap_floor",
        passed=not witnesses,
        worst=worst,
        witnesses=_trim(witnesses),
        details={"floor": floor, "records_checked": checked, "tol": tol,
                 "max_period_checked": k_cap},
    )


def check_gap_growth(result: RunResult, seg: PeriodSegmentation,
                     tol: float = 1e-6) -> CheckReport:
    """Per-round gap growth of non-competing actions during each period.

    During period k (even), the gap of every player-1 action outside the
    two concentrating rows {a1(k-1), a1(k)} grows by at least
    (1-delta)(k-1) - delta(2m-1) per round, and the gap of every player-2
    action outside {a2(k-2), a2(k), a2(k+2)} grows at the same rate; the
    statement transposes for odd k.  The excluded actions are exactly
    those whose payoff entry sits in a mass-carrying row or column, where
    the floor provably fails (a(k-2) earns k-2 per round early in the
    period, so its gap can grow as slowly as 1 per round).  Checked
    between recorded round pairs that lie in the same period with all
    interior rounds included in it.
    """
    meta = result.game.metadata
    m, k_max, delta, loc_r, loc_c = _locators_from_meta(meta)
    records = result.records
    starts = seg.start_rounds
    ends = {}
    ks = sorted(starts)
    for a, b in zip(ks, ks[1:]):
        ends[a] = starts[b] - 1
    if ks:
        ends[ks[-1]] = seg.horizon
    worst = 0.0
    witnesses = []
    pairs = 0
    for r1, r2 in zip(records, records[1:]):
        k = r1.period
        if k is None or r2.period != k or not (4 <= k <= 2 * m - 2):
            continue
        if not (starts.get(k, 10**30) <= r1.round and r2.round <= ends.get(k, -1)):
            continue
        dt = r2.round - r1.round
        if dt <= 0:
            continue
        pairs += 1
        rate = (1.0 - delta) * (k - 1) - delta * (2 * m - 1)
        need = rate * dt
        bound_tol = tol * max(1.0, float(dt))
        if k % 2 == 0:
            excl1 = {loc_r[k - 4], loc_r[k - 3]}
            excl2 = {loc_c[k - 3], loc_c[k - 2]}
            if k >= 5:
                excl2.add(loc_c[k - 5])
        else:
            excl1 = {loc_r[k - 3], loc_r[k - 2]}
            excl2 = {loc_c[k - 4], loc_c[k - 3]}
            if k >= 5:
                excl1.add(loc_r[k - 5])
        for p, excl in ((0, excl1), (1, excl2)):
            dg = r2.gaps(p) - r1.gaps(p)
            for a in range(dg.shape[0]):
                if a in excl:
                    continue
                v = need - float(dg[a]) - bound_tol
                if v > worst:
                    worst = v
                if v > 0.0:
                    witnesses.append({"round": r1.round, "player": p + 1,
                                      "action": a + 1, "period": k,
                                      "shortfall": v})
    worst = max(worst, 0.0)
    return CheckReport(
        name="gap_growth",
        passed=not witnesses,
        worst=worst,
        witnesses=_trim(witnesses),
        details={"pairs": pairs, "tol": tol},
    )


# ---------------------------------------------------------------------------
# Fictitious play / snake checks.


def check_snake_dwells(result: RunResult) -> CheckReport:
    """On-path invariance plus the dwell-time recursion and factorial floor.

    Maps each dwell segment to the payoff of its profile.  Hard
    requirements: all visited profiles are on the path, payoffs strictly
    increase along the visit order (no backtracking), completed dwells
    satisfy T_k >= (k-1) T_(k-1) + T_(k-2) + T_(k-3) - sum_(j<=k-4) j T_j
    (terms with nonpositive index read 0) and T_k >= (k-1)!.
    """
    game = result.game
    u = game.payoffs[0]
    n = game.players
    if result.fp_dwells is None:
        return CheckReport(
            name="snake_dwells", passed=True,
            details={"applicable": False,
                     "reason": "run has no dwell telemetry"},
        )
    segs = list(result.fp_dwells)
    censored = result.fp_open_dwell
    failures = []
    payoffs = []
    for prof, length in segs + ([censored] if censored else []):
        idx = tuple((prof >> i) & 1 for i in range(n))
        payoffs.append((int(u[idx]), length))
    for pos, (k, _) in enumerate(payoffs):
        if k <= 0:
            failures.append({"check": "on_path", "segment": pos})
    for (k1, _), (k2, _) in zip(payoffs, payoffs[1:]):
        if k2 <= k1:
            failures.append({"check": "forward_motion", "from": k1, "to": k2})

    dwell = {k: l for (k, l) in payoffs[:len(segs)]}
    cens = {payoffs[-1][0]: payoffs[-1][1]} if censored else {}
    checks = {}
    inconclusive = []

    def value(k):
        if k <= 0:
            return 0
        return dwell.get(k, cens.get(k))

    for k in sorted(set(dwell) | set(cens)):
        if k < 1:
            continue
        fact = math.factorial(k - 1)
        ok = value(k) >= fact
        checks[f"factorial_k{k}"] = {"lhs": value(k), "rhs": fact, "ok": ok,
                                     "censored": k in cens}
        if not ok:
            (inconclusive if k in cens else failures).append(
                {"check": f"factorial_k{k}", "lhs": value(k), "rhs": fact})
        refs = [k - 1, k - 2, k - 3] + list(range(1, max(k - 3, 1)))
        if any(j >= 1 and (value(j) is None or j in cens) for j in refs):
            continue
        rhs = ((k - 1) * value(k - 1) + value(k - 2) + value(k - 3)
               - sum(j * value(j) for j in range(1, k - 3)))
        ok = value(k) >= rhs
        checks[f"recursion_k{k}"] = {"lhs": value(k), "rhs": rhs, "ok": ok,
                                     "censored": k in cens}
        if not ok:
            (inconclusive if k in cens else failures).append(
                {"check": f"recursion_k{k}", "lhs": value(k), "rhs": rhs})

    worst = 0.0
    for f in failures:
        if "rhs" in f:
            worst = max(worst, float(f["rhs"] - f["lhs"]))
        else:
            worst = max(worst, 1.0)
    return CheckReport(
        name="snake_dwells",
        passed=not failures,
        worst=worst,
        witnesses=_trim(failures),
        details={"dwells": dwell, "censored": cens, "checks": checks,
                 "inconclusive": inconclusive, "applicable": True},
    )


# ---------------------------------------------------------------------------
# Lazy-dynamics checks.


def check_epoch_growth(result: RunResult) -> CheckReport:
    """Update count K <= Phi_range / epsilon, plus inter-update ratios.

    The update times tau_1 < tau_2 < ... are read off the records (every
    adopted update is recorded).  The ratio tau_(j+1)/tau_j series and the
    implied empirical epoch constant are reported without a pass/fail
    assertion; the count bound is the hard part.
    """
    eps = result.config.lazy_epsilon
    if eps is None:
        raise ValueError("epoch growth needs a lazy run")
    K_count = 0
    times = []
    for r in result.records:
        k = sum(1 for f in r.updated if f)
        if k:
            K_count += k
            times.append(r.round)
    bound = phi_range(result.game) / eps
    ratios = [b / a for a, b in zip(times, times[1:])]
    max_ratio = max(ratios) if ratios else None
    return CheckReport(
        name="lazy_update_count",
        passed=K_count <= bound,
        worst=max(0.0, K_count - bound),
        witnesses=[] if K_count <= bound else [{"updates": K_count,
                                                "bound": bound}],
        details={
            "updates": K_count,
            "bound": bound,
            "epsilon": eps,
            "update_rounds": times[:200],
            "max_ratio": max_ratio,
            "implied_P": (eps * (max_ratio - 1.0)) if max_ratio else None,
        },
    )


def check_lazy_termination(result: RunResult, tol: float = 1e-9) -> CheckReport:
    """Frozen low-regret profiles are approximate equilibria.

    At any recorded round t with no adopted update during the previous full
    sweep (n consecutive rounds) and every player's regret at most
    eps*t/2, the current profile must be a 2*eps-Nash equilibrium.  The
    update-round list is complete because lazy runs record every update.
    """
    cfg = result.config
    eps = cfg.lazy_epsilon
    if eps is None:
        raise ValueError("termination check needs a lazy run")
    n = result.game.players
    update_rounds = np.array(
        [r.round for r in result.records if any(r.updated)], dtype=np.int64
    )
    gaps = _nash_gaps(result)
    worst = 0.0
    witnesses = []
    checked = 0
    for r, g in zip(result.records, gaps):
        t = r.round
        if t < n:
            continue
        lo = np.searchsorted(update_rounds, t - n + 1, side="left")
        hi = np.searchsorted(update_rounds, t, side="right")
        if hi > lo:
            continue
        regs = [float(r.cumulatives[p].max()) - r.sums_played[p]
                for p in range(n)]
        if max(regs) > eps * t / 2.0:
            continue
        checked += 1
        v = float(g) - 2.0 * eps - tol
        if v > worst:
            worst = v
        if v > 0.0:
            witnesses.append({"round": t, "nash_gap": float(g),
                              "regrets": regs})
    worst = max(worst, 0.0)
    return CheckReport(
        name="lazy_termination",
        passed=not witnesses,
        worst=worst,
        witnesses=_trim(witnesses),
        details={"rounds_checked": checked, "epsilon": eps, "tol": tol},
    )


# ---------------------------------------------------------------------------
# Dispatcher.


def _gamma1_of(game) -> float | None:
    meta = game.metadata
    if meta.get("construction") == "padded":
        return float(meta["gamma"]) / int(meta["m"])
    return None


def run_all(result: RunResult, gamma1: float | None = None) -> list:
    """Every checker applicable to the run, in a fixed order."""
    reports = []
    cfg = result.config
    game = result.game
    if cfg.algorithm == "ftrl":
        reports.append(check_improvement(result))
        reports.append(check_order_preservation(result))
        reports.append(check_gap_probability(result))
        reports.append(check_regret_bound(result))
        if game.identical_interest or game.potential is not None:
            reports.append(check_potential_monotone(result))
            reports.append(check_path_length(result))
        if cfg.lazy_epsilon is not None:
            reports.append(check_epoch_growth(result))
            if cfg.update_mode == "alternating":
                reports.append(check_lazy_termination(result))
        if result.period_state is not None:
            seg = segmentation_from_run(result)
            g1 = gamma1 if gamma1 is not None else _gamma1_of(game)
            m = int(game.metadata["m"])
            reports.append(check_period_consistency(seg))
            reports.append(check_period_recursion(seg, gamma1=g1, m=m))
            reports.append(check_nash_gap_floor(result, m=m))
            reports.append(check_gap_growth(result, seg))
    elif game.metadata.get("construction") == "snake":
        reports.append(check_snake_dwells(result))
    return reports
