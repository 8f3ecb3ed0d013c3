"""Compiled scalar cores shared by every engine entry point.

All numeric code that touches a trajectory lives here as plain sequential
scalar loops compiled with numba (fastmath stays off).  The Python engine
calls these helpers one round at a time; the batch loops below execute the
same helpers inside a single compiled loop.  Both paths therefore perform
the identical sequence of floating-point operations, which is what makes
run/resume and engine/kernel comparisons bit-exact.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# Regularizer codes used across kernels (mirrored by regularizers.py).
REG_ENTROPY = 0
REG_EUCLIDEAN = 1
REG_LOG = 2
REG_TSALLIS = 3

# Floor of the truncated simplex for the log regularizer.
LOG_FLOOR = 1e-9

# Post-condition on solver output: |sum(x) - 1| must not exceed this.
SUM_TOL = 1e-12

_MAX_BISECT = 200


@njit(cache=True)
def kahan_add(s, c, v):
    """One compensated-summation step; returns the new (sum, compensation)."""
    y = v - c
    t = s + y
    c = (t - s) - y
    return t, c


@njit(cache=True)
def lr_value(alpha, const_eta, t):
    """Learning rate used to compute the strategy for round t + 1.

    alpha < 0 selects the constant schedule (const_eta); otherwise
    eta = t**(-alpha) with alpha in [0, 1).
    """
    if alpha < 0.0:
        return const_eta
    if alpha == 0.0:
        return 1.0
    return math.pow(float(t), -alpha)


@njit(cache=True)
def dual_norm_sq(u, norm_code):
    """Squared dual norm of a utility vector (1 -> sup norm, 2 -> l2)."""
    if norm_code == 1:
        best = 0.0
        for a in range(u.shape[0]):
            v = abs(u[a])
            if v > best:
                best = v
        return best * best
    s = 0.0
    for a in range(u.shape[0]):
        s += u[a] * u[a]
    return s


@njit(cache=True)
def dot_seq(a, b):
    """Plain sequential dot product (same op order as the batch loops)."""
    s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


@njit(cache=True)
def gain_seq(prop, cur, u):
    """<prop - cur, u> in one sequential pass."""
    s = 0.0
    for i in range(u.shape[0]):
        s += (prop[i] - cur[i]) * u[i]
    return s


@njit(cache=True)
def kahan_add_vec(S, C, u):
    """Compensated in-place vector accumulation, coordinate order."""
    for i in range(S.shape[0]):
        y = u[i] - C[i]
        t = S[i] + y
        C[i] = (t - S[i]) - y
        S[i] = t


@njit(cache=True)
def matvec_rows(A, x, out):
    """out[i] = sum_j A[i, j] * x[j], sequential order."""
    n, m = A.shape
    for i in range(n):
        s = 0.0
        for j in range(m):
            s += A[i, j] * x[j]
        out[i] = s


@njit(cache=True)
def matvec_cols(A, x, out):
    """out[j] = sum_i x[i] * A[i, j], sequential order."""
    n, m = A.shape
    for j in range(m):
        s = 0.0
        for i in range(n):
            s += A[i, j] * x[i]
        out[j] = s


@njit(cache=True)
def _solve_entropy(U, eta, out):
    # Softmax of eta*U with max subtraction; exact closed form.
    m = U.shape[0]
    hi = eta * U[0]
    for a in range(1, m):
        v = eta * U[a]
        if v > hi:
            hi = v
    s = 0.0
    for a in range(m):
        e = math.exp(eta * U[a] - hi)
        out[a] = e
        s += e
    inv = 1.0 / s
    for a in range(m):
        out[a] = out[a] * inv
    return 0.0


@njit(cache=True)
def _solve_euclidean(U, eta, out):
    # Euclidean projection of eta*(U - max U) onto the simplex
    # (sort-and-threshold).  The shift changes nothing mathematically and
    # keeps the thresholding well conditioned when U is large.
    m = U.shape[0]
    hi = U[0]
    for a in range(1, m):
        if U[a] > hi:
            hi = U[a]
    y = np.empty(m)
    for a in range(m):
        y[a] = eta * (U[a] - hi)
    srt = np.sort(y)
    css = 0.0
    theta = 0.0
    for i in range(m):
        v = srt[m - 1 - i]
        css += v
        t = (css - 1.0) / (i + 1.0)
        if v - t > 0.0:
            theta = t
    for a in range(m):
        v = y[a] - theta
        out[a] = v if v > 0.0 else 0.0
    return 0.0


@njit(cache=True, error_model="numpy")
def _solve_log(U, eta, out):
    # Maximize <x, U> + (1/eta) * sum(log x) over the truncated simplex
    # {x >= LOG_FLOOR, sum x = 1}.  KKT gives x_a = max(tau, 1/(eta*(lam - U_a)))
    # with a scalar multiplier lam > max(U); the sum is strictly decreasing in
    # lam, so bisection applies.  We bisect in mu = lam - max(U) so that the
    # bracket lives near the origin regardless of how large U has grown.
    m = U.shape[0]
    tau = LOG_FLOOR
    hiU = U[0]
    for a in range(1, m):
        if U[a] > hiU:
            hiU = U[a]
    W = np.empty(m)
    for a in range(m):
        W[a] = U[a] - hiU

    mu_hi = max(1.0, float(m) / eta)
    for _ in range(_MAX_BISECT):
        s = 0.0
        for a in range(m):
            v = 1.0 / (eta * (mu_hi - W[a]))
            s += v if v > tau else tau
        if s < 1.0:
            break
        mu_hi *= 2.0
    mu_lo = 0.0
    best_mu = mu_hi
    best_err = 1e300
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (mu_lo + mu_hi)
        if mid <= mu_lo or mid >= mu_hi:
            break
        s = 0.0
        for a in range(m):
            v = 1.0 / (eta * (mid - W[a]))
            s += v if v > tau else tau
        err = abs(s - 1.0)
        if err < best_err:
            best_err = err
            best_mu = mid
        if err <= SUM_TOL:
            break
        if s > 1.0:
            mu_lo = mid
        else:
            mu_hi = mid
    s = 0.0
    for a in range(m):
        v = 1.0 / (eta * (best_mu - W[a]))
        if v < tau:
            v = tau
        out[a] = v
        s += v
    return abs(s - 1.0)


@njit(cache=True, error_model="numpy")
def _solve_tsallis(U, eta, q, out):
    # Maximize <x, U> - R(x)/eta with R(x) = -(1/(q(1-q))) * sum(x^q),
    # 0 < q < 1.  KKT: x_a = (eta*(1-q)*(lam - U_a))**(-1/(1-q)), lam > max U.
    # Same shifted bisection as the log solver.
    m = U.shape[0]
    p = -1.0 / (1.0 - q)
    hiU = U[0]
    for a in range(1, m):
        if U[a] > hiU:
            hiU = U[a]
    W = np.empty(m)
    for a in range(m):
        W[a] = U[a] - hiU

    scale = eta * (1.0 - q)
    # x_max = (scale*mu)**p = 1 at mu = 1/scale; start the bracket there.
    mu_hi = 2.0 / scale
    for _ in range(_MAX_BISECT):
        s = 0.0
        for a in range(m):
            s += math.pow(scale * (mu_hi - W[a]), p)
        if s < 1.0:
            break
        mu_hi *= 2.0
    mu_lo = 0.0
    best_mu = mu_hi
    best_err = 1e300
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (mu_lo + mu_hi)
        if mid <= mu_lo or mid >= mu_hi:
            break
        s = 0.0
        for a in range(m):
            s += math.pow(scale * (mid - W[a]), p)
        err = abs(s - 1.0)
        if err < best_err:
            best_err = err
            best_mu = mid
        if err <= SUM_TOL:
            break
        if s > 1.0:
            mu_lo = mid
        else:
            mu_hi = mid
    s = 0.0
    for a in range(m):
        v = math.pow(scale * (best_mu - W[a]), p)
        out[a] = v
        s += v
    return abs(s - 1.0)


@njit(cache=True)
def solve_simplex(reg_code, q, U, eta, out):
    """Write argmax_{x in simplex} <x, U> - R(x)/eta into out.

    Returns the residual |sum(out) - 1| reached by the solver; closed-form
    solvers return 0.0.  Callers treat residual > SUM_TOL as failure.
    """
    if reg_code == REG_ENTROPY:
        return _solve_entropy(U, eta, out)
    if reg_code == REG_EUCLIDEAN:
        return _solve_euclidean(U, eta, out)
    if reg_code == REG_LOG:
        return _solve_log(U, eta, out)
    return _solve_tsallis(U, eta, q, out)


@njit(cache=True)
def period_clause(k, x1, x2, loc_r, loc_c, delta):
    """Detection clause for period k >= 4 on a padded-matrix trajectory.

    loc_r/loc_c hold the 0-based row/column of payoff entry k at index k-3.
    Even k: the column player concentrates on the column of entry k while
    the row player's mass sits on the rows of entries k-1 and k.  Odd k is
    the transpose statement.
    """
    if k % 2 == 0:
        if x2[loc_c[k - 3]] < 1.0 - delta:
            return False
        return x1[loc_r[k - 4]] + x1[loc_r[k - 3]] >= 1.0 - delta
    if x1[loc_r[k - 3]] < 1.0 - delta:
        return False
    return x2[loc_c[k - 4]] + x2[loc_c[k - 3]] >= 1.0 - delta


@njit(cache=True)
def run_two_player_ftrl(
    A1,
    A2,
    reg_code,
    q,
    alpha,
    const_eta,
    t_start,
    t_end,
    x1,
    x2,
    U1,
    C1,
    U2,
    C2,
    acc,
    rec_plan,
    rec_round,
    rec_eta,
    rec_period,
    rec_x1,
    rec_x2,
    rec_u1,
    rec_u2,
    rec_U1,
    rec_U2,
    rec_sum1,
    rec_sum2,
    rec_bnd1,
    rec_bnd2,
    track,
    loc_r,
    loc_c,
    delta,
    pst,
    period_start,
):
    """Simultaneous two-player FTRL loop over rounds (t_start, t_end].

    State arrays (x*, U*, C*, acc, pst, period_start) are updated in place so
    a later call resumes bit-exactly.  acc layout: [sum_xu1, comp, sum_xu2,
    comp, bound1, comp, bound2, comp] where bound_i accumulates
    eta_t * ||u_i^(t)||_*^2.  pst layout: [current_period, first_violation
    _round, first_violation_label, violation_count].

    Returns (records_written, worst_solver_residual, failed_round) with
    failed_round == -1 when every solve met SUM_TOL.
    """
    m1 = A1.shape[0]
    m2 = A1.shape[1]
    u1b = np.empty(m1)
    u2b = np.empty(m2)
    p1b = np.empty(m1)
    p2b = np.empty(m2)
    norm_code = 1 if reg_code == REG_ENTROPY else 2
    kmax = period_start.shape[0] + 2
    rc = 0
    nrec = 0
    worst = 0.0
    for t in range(t_start + 1, t_end + 1):
        for i in range(m1):
            s = 0.0
            for j in range(m2):
                s += A1[i, j] * x2[j]
            u1b[i] = s
        for j in range(m2):
            s = 0.0
            for i in range(m1):
                s += A2[i, j] * x1[i]
            u2b[j] = s

        d1 = 0.0
        for i in range(m1):
            d1 += x1[i] * u1b[i]
        acc[0], acc[1] = kahan_add(acc[0], acc[1], d1)
        d2 = 0.0
        for j in range(m2):
            d2 += x2[j] * u2b[j]
        acc[2], acc[3] = kahan_add(acc[2], acc[3], d2)

        for i in range(m1):
            U1[i], C1[i] = kahan_add(U1[i], C1[i], u1b[i])
        for j in range(m2):
            U2[j], C2[j] = kahan_add(U2[j], C2[j], u2b[j])

        eta = lr_value(alpha, const_eta, t)
        acc[4], acc[5] = kahan_add(acc[4], acc[5], eta * dual_norm_sq(u1b, norm_code))
        acc[6], acc[7] = kahan_add(acc[6], acc[7], eta * dual_norm_sq(u2b, norm_code))

        k_t = -1
        new_start = False
        if track:
            if t == 1:
                k_t = 3
                pst[0] = 3
                if period_start[0] < 0:
                    period_start[0] = 1
            else:
                found = -1
                for k in range(kmax, 3, -1):
                    if period_clause(k, x1, x2, loc_r, loc_c, delta):
                        found = k
                        break
                cur = pst[0]
                if found == -1 or found < cur:
                    if pst[1] < 0:
                        pst[1] = t
                        pst[2] = found
                    pst[3] += 1
                    k_t = cur
                else:
                    if found > cur:
                        if found > cur + 1:
                            if pst[1] < 0:
                                pst[1] = t
                                pst[2] = found
                            pst[3] += 1
                        pst[0] = found
                        if period_start[found - 3] < 0:
                            period_start[found - 3] = t
                            new_start = True
                    k_t = found

        do_rec = False
        if rc < rec_plan.shape[0] and rec_plan[rc] == t:
            do_rec = True
            rc += 1
        if new_start:
            do_rec = True
        if do_rec and nrec < rec_round.shape[0]:
            rec_round[nrec] = t
            rec_eta[nrec] = eta
            rec_period[nrec] = k_t
            for i in range(m1):
                rec_x1[nrec, i] = x1[i]
                rec_u1[nrec, i] = u1b[i]
                rec_U1[nrec, i] = U1[i]
            for j in range(m2):
                rec_x2[nrec, j] = x2[j]
                rec_u2[nrec, j] = u2b[j]
                rec_U2[nrec, j] = U2[j]
            rec_sum1[nrec] = acc[0]
            rec_sum2[nrec] = acc[2]
            rec_bnd1[nrec] = acc[4]
            rec_bnd2[nrec] = acc[6]
            nrec += 1

        r1 = solve_simplex(reg_code, q, U1, eta, p1b)
        r2 = solve_simplex(reg_code, q, U2, eta, p2b)
        if r1 > worst:
            worst = r1
        if r2 > worst:
            worst = r2
        for i in range(m1):
            x1[i] = p1b[i]
        for j in range(m2):
            x2[j] = p2b[j]
        if worst > SUM_TOL:
            return nrec, worst, t
    return nrec, worst, -1


@njit(cache=True)
def run_fp_binary(
    payoff,
    n,
    t_start,
    t_end,
    actions,
    U,
    C,
    SP,
    SPC,
    tie_code,
    rec_plan,
    rec_round,
    rec_act,
    rec_U,
    rec_sum,
    dwell_profile,
    dwell_len,
    dwell_state,
):
    """Simultaneous fictitious play on an n-player binary tensor game.

    payoff is the flat tensor with profile index sum_i a_i << i.  In-place
    state: actions (int64[n]), U/C (float64[n, 2] cumulative utilities +
    Kahan compensation), SP/SPC (float64[n] realized-payoff sums).  Records
    are written at the rounds listed in rec_plan (state as played at that
    round, cumulative through it).  Dwell lengths are run-length encoded:
    dwell_state = [completed_dwells, current_profile, current_length] with
    finished (profile, length) pairs appended to dwell_profile/dwell_len.
    tie_code 0 keeps the current action on ties (adversarial stay), 1 picks
    the lower index.

    Returns (records_written, rle_overflow_flag).
    """
    rc = 0
    nrec = 0
    overflow = 0
    for t in range(t_start + 1, t_end + 1):
        idx = 0
        for i in range(n):
            idx |= actions[i] << i
        if dwell_state[1] == idx:
            dwell_state[2] += 1
        else:
            if dwell_state[2] > 0:
                if dwell_state[0] < dwell_profile.shape[0]:
                    dwell_profile[dwell_state[0]] = dwell_state[1]
                    dwell_len[dwell_state[0]] = dwell_state[2]
                    dwell_state[0] += 1
                else:
                    overflow = 1
            dwell_state[1] = idx
            dwell_state[2] = 1
        for i in range(n):
            base = idx & ~(1 << i)
            u0 = payoff[base]
            u1 = payoff[base | (1 << i)]
            U[i, 0], C[i, 0] = kahan_add(U[i, 0], C[i, 0], u0)
            U[i, 1], C[i, 1] = kahan_add(U[i, 1], C[i, 1], u1)
            up = u1 if actions[i] == 1 else u0
            SP[i], SPC[i] = kahan_add(SP[i], SPC[i], up)
        if rc < rec_plan.shape[0] and rec_plan[rc] == t:
            rec_round[nrec] = t
            for i in range(n):
                rec_act[nrec, i] = actions[i]
                rec_U[nrec, i, 0] = U[i, 0]
                rec_U[nrec, i, 1] = U[i, 1]
                rec_sum[nrec, i] = SP[i]
            nrec += 1
            rc += 1
        for i in range(n):
            if tie_code == 0:
                other = 1 - actions[i]
                if U[i, other] > U[i, actions[i]]:
                    actions[i] = other
            else:
                actions[i] = 1 if U[i, 1] > U[i, 0] else 0
    return nrec, overflow


@njit(cache=True)
def run_stream_ftrl(utils, reg_code, q, alpha, const_eta):
    """Single learner against a fixed utility stream utils[t-1] at round t.

    Returns (regret, sum_t eta_t*||u_t||_*^2, eta_T, worst_residual) where
    regret = max_a U_T[a] - sum_t <x_t, u_t>.
    """
    T = utils.shape[0]
    m = utils.shape[1]
    norm_code = 1 if reg_code == REG_ENTROPY else 2
    U = np.zeros(m)
    C = np.zeros(m)
    x = np.empty(m)
    for a in range(m):
        x[a] = 1.0 / m
    xb = np.empty(m)
    sum_xu = 0.0
    sc = 0.0
    bnd = 0.0
    bc = 0.0
    worst = 0.0
    eta = 1.0
    for t in range(1, T + 1):
        d = 0.0
        for a in range(m):
            d += x[a] * utils[t - 1, a]
        sum_xu, sc = kahan_add(sum_xu, sc, d)
        for a in range(m):
            U[a], C[a] = kahan_add(U[a], C[a], utils[t - 1, a])
        eta = lr_value(alpha, const_eta, t)
        bnd, bc = kahan_add(bnd, bc, eta * dual_norm_sq(utils[t - 1], norm_code))
        r = solve_simplex(reg_code, q, U, eta, xb)
        if r > worst:
            worst = r
        for a in range(m):
            x[a] = xb[a]
    best = U[0]
    for a in range(1, m):
        if U[a] > best:
            best = U[a]
    return best - sum_xu, bnd, eta, worst
