"""Numba kernels: model filters, quasi-likelihood parts, and the block-Metropolis epoch.

Everything here is written against flat float64 arrays so the same code backs both
the public filtering API and the sampler's inner loop. Parameter layouts per family
are documented in :mod:`tailrisk.models`.
"""

import math

import numpy as np
from numba import njit

# family codes
FAM_RESM = 0   # multi-measure log quantile model with measurement equations
FAM_LOG = 1    # single-measure log quantile model, measurement equation
FAM_RES = 2    # single-measure level quantile model, measurement equation
FAM_ESX = 3    # single-measure level quantile model, no measurement equation
FAM_ADD = 4    # return-driven level quantile model, no realized measure

# leverage centering modes
E2_RAW = 0        # q(e) = e^2
E2_EXPANDING = 1  # q(e) = e^2 - mean(past e^2), causal
E2_FIXED = 2      # q(e) = e^2 - fixed constant

LOG_GUARD = 50.0      # |log(-Q)| beyond this marks the path non-finite
LEVEL_GUARD = 1e22    # |Q| cap for level-form recursions

# filter/likelihood status codes
OK = 0
NONFINITE = 1
BAD_ES = 2
SINGULAR = 3

_LOGDET_FLOOR = math.log(1e-300)


@njit(cache=True)
def filter_kernel(fam, K, e2mode, fixed_e2, theta, r, x, logx,
                  q0, om0, eps0, u0, Q, OM, EPS, U, E2H):
    """Run one family's forward recursion; fills the output arrays in place.

    Returns (status, steps_completed). On a non-zero status the arrays are valid
    only for t < steps_completed.
    """
    T = r.shape[0]
    lag_eps = eps0
    lag_om = om0
    lag_u = np.empty(K)
    for j in range(K):
        lag_u[j] = u0[j]
    sum_e2 = 0.0

    # family-specific lag state
    lag_lq = 0.0
    lag_q = q0
    lag_lx = 0.0
    lag_x = 0.0
    lag_absr = 0.0
    if fam == FAM_RESM or fam == FAM_LOG:
        lag_lq = math.log(-q0)
    if fam == FAM_LOG:
        # missing x lag at t=1: model-implied zero-noise measurement value
        lag_lx = theta[6] + theta[7] * lag_lq
        lag_x = math.exp(lag_lx)
    elif fam == FAM_RES:
        lag_x = theta[6] + theta[7] * (-q0)
        if lag_x < 0.0:
            lag_x = 0.0  # keep the non-negative gap recursion safe

    for t in range(T):
        if e2mode == E2_FIXED:
            e2 = fixed_e2
        elif e2mode == E2_EXPANDING:
            e2 = sum_e2 / t if t > 0 else 0.0
        else:
            e2 = 0.0
        E2H[t] = e2

        if fam == FAM_RESM:
            lq = (theta[0] + theta[1] * lag_lq + theta[2] * lag_eps
                  + theta[3] * (lag_eps * lag_eps - e2))
            for j in range(K):
                lq += theta[4 + j] * lag_u[j]
            if not (abs(lq) <= LOG_GUARD):
                return NONFINITE, t
            q = -math.exp(lq)
            om = theta[4 + 5 * K] + theta[5 + 5 * K] * lag_om
            for j in range(K):
                om += theta[6 + 5 * K + j] * abs(lag_u[j])
            if not math.isfinite(om):
                return NONFINITE, t
            eps = r[t] / q
            Q[t] = q
            OM[t] = om
            EPS[t] = eps
            qeps = eps * eps - e2
            finite_u = True
            for j in range(K):
                u = (logx[t, j] - theta[4 + K + j] - theta[4 + 2 * K + j] * lq
                     - theta[4 + 3 * K + j] * eps - theta[4 + 4 * K + j] * qeps)
                U[t, j] = u
                if not math.isfinite(u):
                    finite_u = False
            if not finite_u:
                return NONFINITE, t
            lag_lq = lq
            for j in range(K):
                lag_u[j] = U[t, j]

        elif fam == FAM_LOG:
            lq = theta[0] + theta[1] * lag_lx + theta[2] * lag_lq
            if not (abs(lq) <= LOG_GUARD):
                return NONFINITE, t
            q = -math.exp(lq)
            om = theta[3] + theta[4] * lag_x + theta[5] * lag_om
            if not math.isfinite(om):
                return NONFINITE, t
            eps = r[t] / q
            Q[t] = q
            OM[t] = om
            EPS[t] = eps
            u = (logx[t, 0] - theta[6] - theta[7] * lq
                 - theta[8] * eps - theta[9] * (eps * eps - e2))
            if not math.isfinite(u):
                return NONFINITE, t
            U[t, 0] = u
            lag_lq = lq
            lag_lx = logx[t, 0]
            lag_x = x[t, 0]

        elif fam == FAM_RES:
            q = theta[0] + theta[1] * lag_x + theta[2] * lag_q
            if not (-LEVEL_GUARD < q) or not (q < 0.0):
                return NONFINITE, t
            om = theta[3] + theta[4] * lag_x + theta[5] * lag_om
            if not math.isfinite(om):
                return NONFINITE, t
            eps = r[t] / q
            Q[t] = q
            OM[t] = om
            EPS[t] = eps
            u = (x[t, 0] - theta[6] - theta[7] * (-q)
                 - theta[8] * eps - theta[9] * (eps * eps - e2))
            if not math.isfinite(u):
                return NONFINITE, t
            U[t, 0] = u
            lag_q = q
            lag_x = x[t, 0]

        elif fam == FAM_ESX:
            q = theta[0] + theta[1] * lag_x + theta[2] * lag_q
            if not (-LEVEL_GUARD < q) or not (q < 0.0):
                return NONFINITE, t
            om = theta[3] + theta[4] * lag_x + theta[5] * lag_om
            if not math.isfinite(om):
                return NONFINITE, t
            eps = r[t] / q
            Q[t] = q
            OM[t] = om
            EPS[t] = eps
            lag_q = q
            lag_x = x[t, 0]

        else:  # FAM_ADD
            q = theta[0] + theta[1] * lag_absr + theta[2] * lag_q
            if not (-LEVEL_GUARD < q) or not (q < 0.0):
                return NONFINITE, t
            om = theta[3] + theta[4] * lag_om
            if not math.isfinite(om):
                return NONFINITE, t
            eps = r[t] / q
            Q[t] = q
            OM[t] = om
            EPS[t] = eps
            lag_q = q
            lag_absr = abs(r[t])

        sum_e2 += EPS[t] * EPS[t]
        lag_eps = EPS[t]
        lag_om = OM[t]

    return OK, T


@njit(cache=True)
def al_meas_parts(alpha, K, T, r, Q, OM, U):
    """Asymmetric-Laplace log-score sum plus the integrated measurement term.

    Returns (status, al_part, meas_part) with meas_part = -(T-K-1)/2 * log|S| and
    S the sample covariance of the measurement residuals (divisor T-K-1).
    """
    al = 0.0
    for t in range(T):
        es = Q[t] - OM[t]
        if not (es < 0.0):
            return BAD_ES, 0.0, 0.0
        hit = 1.0 if r[t] <= Q[t] else 0.0
        al += math.log((alpha - 1.0) / es) + (r[t] - Q[t]) * (alpha - hit) / (alpha * es)
    if not math.isfinite(al):
        return NONFINITE, 0.0, 0.0

    if K == 0:
        return OK, al, 0.0
    if T <= K + 1:
        return SINGULAR, 0.0, 0.0

    # S = U'U / (T - K - 1), then log|S| through an in-place Cholesky
    S = np.zeros((K, K))
    for t in range(T):
        for a in range(K):
            ua = U[t, a]
            for b in range(a + 1):
                S[a, b] += ua * U[t, b]
    div = float(T - K - 1)
    for a in range(K):
        for b in range(a + 1):
            S[a, b] /= div

    logdet = 0.0
    for a in range(K):
        pivot = S[a, a]
        for k in range(a):
            pivot -= S[a, k] * S[a, k]
        if not (pivot > 0.0):
            return SINGULAR, 0.0, 0.0
        piv = math.sqrt(pivot)
        S[a, a] = piv
        logdet += 2.0 * math.log(piv)
        for b in range(a + 1, K):
            s = S[b, a]
            for k in range(a):
                s -= S[b, k] * S[a, k]
            S[b, a] = s / piv
    if logdet <= _LOGDET_FLOOR or not math.isfinite(logdet):
        return SINGULAR, 0.0, 0.0

    return OK, al, -0.5 * (T - K - 1) * logdet


@njit(cache=True)
def integrated_parts(fam, K, alpha, e2mode, fixed_e2, theta, r, x, logx,
                     q0, om0, eps0, u0, Q, OM, EPS, U, E2H):
    """Filter then score: (status, al_part, meas_part) for one parameter vector."""
    status, _ = filter_kernel(fam, K, e2mode, fixed_e2, theta, r, x, logx,
                              q0, om0, eps0, u0, Q, OM, EPS, U, E2H)
    if status != OK:
        return status, 0.0, 0.0
    return al_meas_parts(alpha, K, r.shape[0], r, Q, OM, U)


@njit(cache=True)
def _in_bounds(v, lo, hi, lo_closed):
    if v > lo and v < hi:
        return True
    return lo_closed and v == lo


@njit(cache=True)
def run_epoch(theta, lp_cur,
              fam, K, alpha, e2mode, fixed_e2,
              r, x, logx, q0, om0, eps0, u0,
              lo, hi, lo_closed,
              bidx, bptr, Ls, csqrt, w_cut1, w_cut2,
              comp_u, zmat, acc_u,
              draws, lps, acc_cnt, comp_cnt,
              Qb, OMb, EPSb, Ub, E2Hb, cand):
    """One tuning epoch of block random-walk Metropolis sweeps.

    All randomness is pre-generated (comp_u, zmat, acc_u) so the epoch is a pure
    function of its inputs. theta is updated in place; draws/lps/acc_cnt/comp_cnt
    are filled. Returns the final log posterior.
    """
    n_sweeps = comp_u.shape[0]
    nb = bptr.shape[0] - 1
    npar = theta.shape[0]
    for i in range(n_sweeps):
        for b in range(nb):
            u = comp_u[i, b]
            comp = 0 if u < w_cut1 else (1 if u < w_cut2 else 2)
            comp_cnt[b, comp] += 1
            s = bptr[b]
            d = bptr[b + 1] - s
            for k in range(npar):
                cand[k] = theta[k]
            ok = True
            for a in range(d):
                idx = bidx[s + a]
                step = 0.0
                for k in range(a + 1):
                    step += Ls[b, a, k] * zmat[i, b, k]
                v = theta[idx] + csqrt[comp] * step
                cand[idx] = v
                if not _in_bounds(v, lo[idx], hi[idx], lo_closed[idx]):
                    ok = False
            if ok:
                st, al, meas = integrated_parts(
                    fam, K, alpha, e2mode, fixed_e2, cand, r, x, logx,
                    q0, om0, eps0, u0, Qb, OMb, EPSb, Ub, E2Hb)
                if st == OK:
                    lp_c = al + meas
                    if math.log(acc_u[i, b]) < lp_c - lp_cur:
                        for a in range(d):
                            idx = bidx[s + a]
                            theta[idx] = cand[idx]
                        lp_cur = lp_c
                        acc_cnt[b] += 1
        for k in range(npar):
            draws[i, k] = theta[k]
        lps[i] = lp_cur
    return lp_cur


@njit(cache=True)
def ar1_log_recursion(intercept, ar_coef, shocks, y0):
    """y_t = intercept + ar_coef * y_{t-1} + shocks[t-1], y_0 = y0; returns y_1..y_n."""
    n = shocks.shape[0]
    out = np.empty(n)
    prev = y0
    for t in range(n):
        prev = intercept + ar_coef * prev + shocks[t]
        out[t] = prev
    return out
