# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; same contracts as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline double _pen(double u, const double* qs, Py_ssize_t a, Py_ssize_t b, bint exact) noexcept nogil:
    cdef double best = 0.0, v, q
    cdef Py_ssize_t i
    if exact:
        return u * u
    for i in range(a, b):
        q = qs[i]
        v = (2.0 * u - q) * q
        if v > best:
            best = v
    return best


cdef inline double _ratio(double c, double delta, double M, const double* qs,
                          Py_ssize_t a, Py_ssize_t b, bint exact) noexcept nogil:
    cdef double thr, prev = 0.0, q
    cdef Py_ssize_t i
    if c < 0.0:
        return -1.0
    if delta <= 0.0:
        return M
    if exact:
        thr = sqrt(c / delta)
        return M if M < thr else thr
    thr = c / delta
    for i in range(a, b):
        q = qs[i]
        if q * q > thr:
            q = 0.5 * (prev + q)
            return M if M < q else q
        prev = q
    return M


cdef inline double _g_of(double t, double lo, double hi, double u) noexcept nogil:
    cdef double g
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


cdef inline double _phi(double t, double g, double c, double delta, const double* qs,
                        Py_ssize_t a, Py_ssize_t b, bint exact) noexcept nogil:
    if g <= 0.0:
        return 0.0
    if exact:
        return c * g + delta * t * t / g
    return c * g + delta * g * _pen(t / g, qs, a, b, False)


cdef inline double _clip(double x, double l, double r) noexcept nogil:
    if x < l:
        return l
    if x > r:
        return r
    return x


cdef void _fixed_g_min(double A, double bp, double g, double c, double delta, const double* qs,
                       Py_ssize_t a, Py_ssize_t b, bint exact, double tl, double tr,
                       double* best_t, double* best_h) noexcept nogil:
    cdef double A2, t, h, q, left, right, sl, sr
    cdef Py_ssize_t j
    if tr < tl or g <= 0.0:
        return
    if exact:
        A2 = A + delta / g
        if A2 > 0.0:
            t = _clip(bp / A2, tl, tr)
        else:
            t = tr if bp > 0.0 else tl
        h = A2 * t * t - 2.0 * bp * t + c * g
        if h < best_h[0]:
            best_t[0] = t
            best_h[0] = h
        return
    left = 0.0
    for j in range(a - 1, b):
        q = 0.0 if j < a else qs[j]
        right = g * 0.5 * (q + qs[j + 1]) if j + 1 < b else INFINITY
        sl = left if left > tl else tl
        sr = right if right < tr else tr
        if sl <= sr:
            if A > 0.0:
                t = _clip((bp - delta * q) / A, sl, sr)
            else:
                t = sr if bp - delta * q > 0.0 else sl
            h = A * t * t - 2.0 * bp * t + c * g + delta * (2.0 * q * t - q * q * g)
            if h < best_h[0]:
                best_t[0] = t
                best_h[0] = h
        left = right
        if left > tr:
            break


cdef double _arc_min(double A, double b, double c, double delta, double lo, double hi, double M,
                     const double* qs, Py_ssize_t a, Py_ssize_t e, bint exact) noexcept nogil:
    cdef double sgn, bp, tmax, u, best_t, best_h, t1, t2, kappa, t, h
    if hi <= 0.0 or b == 0.0:
        return 0.0
    sgn = 1.0 if b > 0.0 else -1.0
    bp = fabs(b)
    tmax = M * hi
    u = _ratio(c, delta, M, qs, a, e, exact)
    best_t = 0.0
    best_h = c * _g_of(0.0, lo, hi, u)
    if u <= 0.0:
        _fixed_g_min(A, bp, hi, c, delta, qs, a, e, exact, 0.0, tmax, &best_t, &best_h)
    else:
        t1 = lo * u
        if t1 > tmax:
            t1 = tmax
        t2 = hi * u
        if t2 > tmax:
            t2 = tmax
        if lo > 0.0:
            _fixed_g_min(A, bp, lo, c, delta, qs, a, e, exact, 0.0, t1, &best_t, &best_h)
        kappa = (c + delta * _pen(u, qs, a, e, exact)) / u
        if t2 > t1:
            if A > 0.0:
                t = _clip((2.0 * bp - kappa) / (2.0 * A), t1, t2)
            else:
                t = t2 if 2.0 * bp > kappa else t1
            h = A * t * t - 2.0 * bp * t + kappa * t
            if h < best_h:
                best_t = t
                best_h = h
        _fixed_g_min(A, bp, hi, c, delta, qs, a, e, exact, t2, tmax, &best_t, &best_h)
    return sgn * best_t


cdef double _arc_lower(double ell, double c, double delta, double lo, double hi, double M,
                       const double* qs, Py_ssize_t a, Py_ssize_t e, bint exact) noexcept nogil:
    cdef double L = fabs(ell), v, inner, val, prev, q, theta
    cdef Py_ssize_t j
    if exact:
        if delta > 0.0:
            v = L / (2.0 * delta)
            if v > M:
                v = M
            inner = -L * v + delta * v * v
        else:
            inner = -L * M
    else:
        inner = 0.0
        prev = 0.0
        for j in range(a, e):
            q = qs[j]
            v = 0.5 * (prev + q)
            if v > M:
                break
            val = (2.0 * v - prev) * prev
            if val < 0.0:
                val = 0.0
            val = -L * v + delta * val
            if val < inner:
                inner = val
            prev = q
        val = -L * M + delta * _pen(M, qs, a, e, False)
        if val < inner:
            inner = val
    theta = c + inner
    return lo * theta if lo * theta < hi * theta else hi * theta


def arc_min(double A, double b, double c, double delta, double lo, double hi, double M,
            const double[::1] qs, Py_ssize_t a, Py_ssize_t e, bint exact):
    cdef const double* qp = &qs[0] if qs.shape[0] > 0 else NULL
    cdef double t = _arc_min(A, b, c, delta, lo, hi, M, qp, a, e, exact)
    cdef double u = _ratio(c, delta, M, qp, a, e, exact)
    return t, (_g_of(fabs(t), lo, hi, u) if hi > 0.0 else 0.0)


def arc_lower(double ell, double c, double delta, double lo, double hi, double M,
              const double[::1] qs, Py_ssize_t a, Py_ssize_t e, bint exact):
    cdef const double* qp = &qs[0] if qs.shape[0] > 0 else NULL
    return _arc_lower(ell, c, delta, lo, hi, M, qp, a, e, exact)


def cd_column(const double[:, ::1] Q, const double[::1] lin, const double[::1] delta,
              const double[::1] cost, const double[::1] lo, const double[::1] hi, double M,
              const cnp.int64_t[::1] cptr_pos, const double[::1] cval_pos,
              const cnp.int64_t[::1] cptr_neg, const double[::1] cval_neg,
              bint exact, double[::1] beta, int max_sweeps, double step_tol):
    cdef Py_ssize_t p = beta.shape[0], i, r
    cdef int sweeps = 0, s
    cdef double old, A, b, new, d, biggest
    cdef const double* qpos = &cval_pos[0] if cval_pos.shape[0] > 0 else NULL
    cdef const double* qneg = &cval_neg[0] if cval_neg.shape[0] > 0 else NULL
    cdef double* Qb
    if p == 0:
        return 0
    Qb = <double*> malloc(p * sizeof(double))
    with nogil:
        for i in range(p):
            Qb[i] = 0.0
            for r in range(p):
                Qb[i] += Q[i, r] * beta[r]
        for s in range(1, max_sweeps + 1):
            sweeps = s
            biggest = 0.0
            for i in range(p):
                old = beta[i]
                A = Q[i, i]
                b = lin[i] - Qb[i] + A * old
                if b >= 0.0:
                    new = _arc_min(A, b, cost[i], delta[i], lo[i], hi[i], M, qpos,
                                   cptr_pos[i], cptr_pos[i + 1], exact)
                else:
                    new = _arc_min(A, b, cost[i], delta[i], lo[i], hi[i], M, qneg,
                                   cptr_neg[i], cptr_neg[i + 1], exact)
                d = new - old
                if d != 0.0:
                    beta[i] = new
                    for r in range(p):
                        Qb[r] += Q[r, i] * d
                    if fabs(d) > biggest:
                        biggest = fabs(d)
            if biggest <= step_tol:
                break
    free(Qb)
    return sweeps


def column_eval(const double[:, ::1] Q, const double[::1] lin, double yy, const double[::1] delta,
                const double[::1] cost, const double[::1] lo, const double[::1] hi, double M,
                const cnp.int64_t[::1] cptr_pos, const double[::1] cval_pos,
                const cnp.int64_t[::1] cptr_neg, const double[::1] cval_neg,
                bint exact, const double[::1] beta, double[::1] g_out):
    cdef Py_ssize_t p = beta.shape[0], i, r
    cdef double smooth = yy, primal, lower, t, u, g, qb, grad
    cdef const double* qpos = &cval_pos[0] if cval_pos.shape[0] > 0 else NULL
    cdef const double* qneg = &cval_neg[0] if cval_neg.shape[0] > 0 else NULL
    cdef const double* qs
    cdef Py_ssize_t a, e
    if p == 0:
        return yy, yy
    lower = 0.0
    primal = 0.0
    for i in range(p):
        qb = 0.0
        for r in range(p):
            qb += Q[i, r] * beta[r]
        smooth += beta[i] * (qb - 2.0 * lin[i])
        grad = 2.0 * (qb - lin[i])
        lower -= grad * beta[i]
        t = fabs(beta[i])
        if beta[i] >= 0.0:
            qs, a, e = qpos, cptr_pos[i], cptr_pos[i + 1]
        else:
            qs, a, e = qneg, cptr_neg[i], cptr_neg[i + 1]
        u = _ratio(cost[i], delta[i], M, qs, a, e, exact)
        g = _g_of(t, lo[i], hi[i], u)
        if t > M * g:
            g = t / M if t / M < hi[i] else hi[i]
        g_out[i] = g
        primal += _phi(t, g, cost[i], delta[i], qs, a, e, exact)
        if grad > 0.0:
            qs, a, e = qneg, cptr_neg[i], cptr_neg[i + 1]
        else:
            qs, a, e = qpos, cptr_pos[i], cptr_pos[i + 1]
        lower += _arc_lower(grad, cost[i], delta[i], lo[i], hi[i], M, qs, a, e, exact)
    return smooth + primal, smooth + lower


cdef void _rss_rec(double* buf, Py_ssize_t level, Py_ssize_t size, cnp.int64_t* idx,
                   long mask, double* out, const double* diag0, double sing_tol,
                   Py_ssize_t stride) noexcept nogil:
    # buf + level*stride*stride holds a size x size conditional matrix
    cdef double* M = buf + level * stride * stride
    cdef double* S = buf + (level + 1) * stride * stride
    cdef cnp.int64_t* sub_idx = idx + stride
    cdef Py_ssize_t pos, r, c, n2
    cdef double piv, colr
    cdef long nmask
    cdef cnp.int64_t j
    for pos in range(size - 1):
        j = idx[pos]
        piv = M[pos * size + pos]
        n2 = size - pos - 1
        if piv <= sing_tol * (diag0[j] if diag0[j] > 1e-300 else 1e-300):
            for r in range(n2):
                for c in range(n2):
                    S[r * n2 + c] = M[(pos + 1 + r) * size + pos + 1 + c]
        else:
            for r in range(n2):
                colr = M[(pos + 1 + r) * size + pos] / piv
                for c in range(n2):
                    S[r * n2 + c] = M[(pos + 1 + r) * size + pos + 1 + c] - colr * M[pos * size + pos + 1 + c]
        for r in range(n2):
            sub_idx[r] = idx[pos + 1 + r]
        nmask = mask | (1L << j)
        out[nmask] = S[n2 * n2 - 1]
        if n2 > 1:
            _rss_rec(buf, level + 1, n2, sub_idx, nmask, out, diag0, sing_tol, stride)


def subset_rss(C, double sing_tol):
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Cm = np.ascontiguousarray(C, dtype=np.float64)
    cdef Py_ssize_t p = Cm.shape[0] - 1, stride = Cm.shape[0], i
    if p > 30:
        raise ValueError("too many candidates for exhaustive subsets")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(1 << p)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] diag0 = np.ascontiguousarray(np.diag(Cm))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] buf = np.zeros((p + 2) * stride * stride)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx = np.zeros((p + 2) * stride, dtype=np.int64)
    out[0] = Cm[p, p]
    buf[:stride * stride] = Cm.ravel()
    idx[:stride] = np.arange(stride)
    with nogil:
        _rss_rec(&buf[0], 0, stride, &idx[0], 0, &out[0], &diag0[0], sing_tol, stride)
    return out
