"""Pure-Python kernels; reference implementation of ``_ckernels.pyx``.

Conventions shared by both backends
-----------------------------------
Column problem (one child node ``k`` with ``p`` candidate parents)::

    min  yy - 2 lin.b + b'Qb + sum_i phi_i(b_i)

    phi_i(t) = min { c_i g + delta_i g P_i(t / g) :  lo_i <= g <= hi_i,  |t| <= M g }

``P_i(u) = u**2`` when ``exact`` is set.  Otherwise ``P_i`` is the upper
envelope of the zero line and the tangents ``2 q u - q**2`` of ``u**2`` at the
stored cut points ``q`` (kept per sign, sorted ascending, CSR layout).
"""

from __future__ import annotations

import math

import numpy as np


def _pen(u, qs, a, b, exact):
    if exact:
        return u * u
    best = 0.0
    for i in range(a, b):
        q = qs[i]
        v = (2.0 * u - q) * q
        if v > best:
            best = v
    return best


def _ratio(c, delta, M, qs, a, b, exact):
    # t/g at the unclamped optimum of g; -1 pins g to its upper bound
    if c < 0.0:
        return -1.0
    if delta <= 0.0:
        return M
    if exact:
        return min(M, math.sqrt(c / delta))
    thr = c / delta
    prev = 0.0
    for i in range(a, b):
        q = qs[i]
        if q * q > thr:
            return min(M, 0.5 * (prev + q))
        prev = q
    return M


def _g_of(t, lo, hi, u):
    if u < 0.0:
        return hi
    if t <= 0.0:
        return lo
    if u == 0.0:
        return hi
    g = t / u
    if g < lo:
        return lo
    if g > hi:
        return hi
    return g


def _phi(t, g, c, delta, qs, a, b, exact):
    if g <= 0.0:
        return 0.0
    if exact:
        return c * g + delta * t * t / g
    return c * g + delta * g * _pen(t / g, qs, a, b, False)


def _fixed_g_min(A, bp, g, c, delta, qs, a, b, exact, tl, tr, best_t, best_h):
    """Refine (best_t, best_h) with the minimizer over [tl, tr] at fixed g."""
    if tr < tl or g <= 0.0:
        return best_t, best_h
    if exact:
        A2 = A + delta / g
        if A2 > 0.0:
            t = min(max(bp / A2, tl), tr)
        else:
            t = tr if bp > 0.0 else tl
        h = A2 * t * t - 2.0 * bp * t + c * g
        if h < best_h:
            return t, h
        return best_t, best_h
    # tangent j is active on [g*(q_{j-1}+q_j)/2, g*(q_j+q_{j+1})/2], q_0 = 0
    left = 0.0
    for j in range(a - 1, b):
        q = 0.0 if j < a else qs[j]
        right = g * 0.5 * (q + qs[j + 1]) if j + 1 < b else math.inf
        sl, sr = max(left, tl), min(right, tr)
        if sl <= sr:
            if A > 0.0:
                t = min(max((bp - delta * q) / A, sl), sr)
            else:
                t = sr if bp - delta * q > 0.0 else sl
            h = A * t * t - 2.0 * bp * t + c * g + delta * (2.0 * q * t - q * q * g)
            if h < best_h:
                best_t, best_h = t, h
        left = right
        if left > tr:
            break
    return best_t, best_h


def arc_min(A, b, c, delta, lo, hi, M, qs, a, e, exact):
    """Minimize A t^2 - 2 b t + phi(t) over t; returns (t, g)."""
    if hi <= 0.0:
        return 0.0, 0.0
    if b == 0.0:
        u = _ratio(c, delta, M, qs, a, e, exact)
        return 0.0, _g_of(0.0, lo, hi, u)
    sgn = 1.0 if b > 0.0 else -1.0
    bp = abs(b)
    tmax = M * hi
    u = _ratio(c, delta, M, qs, a, e, exact)
    best_t = 0.0
    best_h = c * _g_of(0.0, lo, hi, u)
    if u <= 0.0:
        best_t, best_h = _fixed_g_min(A, bp, hi, c, delta, qs, a, e, exact, 0.0, tmax, best_t, best_h)
    else:
        t1 = min(lo * u, tmax)
        t2 = min(hi * u, tmax)
        if lo > 0.0:
            best_t, best_h = _fixed_g_min(A, bp, lo, c, delta, qs, a, e, exact, 0.0, t1, best_t, best_h)
        kappa = (c + delta * _pen(u, qs, a, e, exact)) / u
        if t2 > t1:
            if A > 0.0:
                t = min(max((2.0 * bp - kappa) / (2.0 * A), t1), t2)
            else:
                t = t2 if 2.0 * bp > kappa else t1
            h = A * t * t - 2.0 * bp * t + kappa * t
            if h < best_h:
                best_t, best_h = t, h
        best_t, best_h = _fixed_g_min(A, bp, hi, c, delta, qs, a, e, exact, t2, tmax, best_t, best_h)
    return sgn * best_t, _g_of(best_t, lo, hi, u)


def arc_lower(ell, c, delta, lo, hi, M, qs, a, e, exact):
    """min of ell*t + c g + delta g P(t/g) over the arc's feasible (t, g)."""
    L = abs(ell)
    if exact:
        if delta > 0.0:
            v = min(M, L / (2.0 * delta))
            inner = -L * v + delta * v * v
        else:
            inner = -L * M
    else:
        # convex piecewise linear in v on [0, M]; check breakpoints
        inner = 0.0
        prev = 0.0
        for j in range(a, e):
            q = qs[j]
            v = 0.5 * (prev + q)
            if v > M:
                break
            val = -L * v + delta * max(0.0, (2.0 * v - prev) * prev)
            if val < inner:
                inner = val
            prev = q
        val = -L * M + delta * _pen(M, qs, a, e, False)
        if val < inner:
            inner = val
    theta = c + inner
    return min(lo * theta, hi * theta)


def cd_column(Q, lin, delta, cost, lo, hi, M, cptr_pos, cval_pos, cptr_neg, cval_neg,
              exact, beta, max_sweeps, step_tol):
    """Cyclic coordinate descent on one column; updates ``beta`` in place.

    Returns the number of sweeps performed.
    """
    p = beta.shape[0]
    if p == 0:
        return 0
    Qb = Q @ beta
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        biggest = 0.0
        for i in range(p):
            old = beta[i]
            A = Q[i, i]
            b = lin[i] - Qb[i] + A * old
            if b >= 0.0:
                qs, a, e = cval_pos, cptr_pos[i], cptr_pos[i + 1]
            else:
                qs, a, e = cval_neg, cptr_neg[i], cptr_neg[i + 1]
            new, _ = arc_min(A, b, cost[i], delta[i], lo[i], hi[i], M, qs, a, e, exact)
            d = new - old
            if d != 0.0:
                beta[i] = new
                Qb += Q[:, i] * d
                if abs(d) > biggest:
                    biggest = abs(d)
        if biggest <= step_tol:
            break
    return sweeps


def column_eval(Q, lin, yy, delta, cost, lo, hi, M, cptr_pos, cval_pos, cptr_neg, cval_neg,
                exact, beta, g_out):
    """Objective value at ``beta`` (optimal g) and a certified lower bound.

    The bound linearizes the smooth part at ``beta`` and minimizes the
    separable remainder exactly over each arc's feasible set.
    """
    p = beta.shape[0]
    if p == 0:
        return yy, yy
    Qb = Q @ beta
    smooth = yy - 2.0 * float(lin @ beta) + float(beta @ Qb)
    grad = 2.0 * (Qb - lin)
    primal = smooth
    lower = smooth - float(grad @ beta)
    for i in range(p):
        t = abs(beta[i])
        if beta[i] >= 0.0:
            qs, a, e = cval_pos, cptr_pos[i], cptr_pos[i + 1]
        else:
            qs, a, e = cval_neg, cptr_neg[i], cptr_neg[i + 1]
        u = _ratio(cost[i], delta[i], M, qs, a, e, exact)
        g = _g_of(t, lo[i], hi[i], u)
        if t > M * g:
            g = min(hi[i], t / M)
        g_out[i] = g
        primal += _phi(t, g, cost[i], delta[i], qs, a, e, exact)
        if grad[i] > 0.0:
            qs, a, e = cval_neg, cptr_neg[i], cptr_neg[i + 1]
        else:
            qs, a, e = cval_pos, cptr_pos[i], cptr_pos[i + 1]
        lower += arc_lower(grad[i], cost[i], delta[i], lo[i], hi[i], M, qs, a, e, exact)
    return primal, lower


def subset_rss(C, sing_tol):
    """RSS of every parent subset by a depth-first sweep of the Gram matrix.

    ``C`` is the ``(p+1) x (p+1)`` matrix ``[[G_PP + mu I, G_Py], [G_yP, yy]]``.
    Entry ``mask`` of the result is the minimal ridge objective of the target
    regressed on the candidates whose bits are set in ``mask``.  Pivots below
    ``sing_tol`` times the original diagonal are treated as collinear and leave
    the RSS unchanged, which matches the minimum-norm least-squares solution.
    """
    p = C.shape[0] - 1
    out = np.empty(1 << p)
    out[0] = C[p, p]
    diag0 = np.diag(C).copy()

    def rec(M, idx, mask):
        # M is the conditional matrix over rows idx (last entry = target)
        for pos in range(len(idx) - 1):
            j = idx[pos]
            piv = M[pos, pos]
            rest = list(range(pos + 1, len(idx)))
            sub_idx = [idx[r] for r in rest]
            if piv <= sing_tol * max(diag0[j], 1e-300):
                sub = M[np.ix_(rest, rest)]
            else:
                col = M[rest, pos]
                sub = M[np.ix_(rest, rest)] - np.outer(col, col) / piv
            nmask = mask | (1 << j)
            out[nmask] = sub[-1, -1]
            if len(sub_idx) > 1:
                rec(sub, sub_idx, nmask)

    rec(np.array(C, dtype=float), list(range(p + 1)), 0)
    return out
