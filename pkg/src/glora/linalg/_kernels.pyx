# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense kernels: Householder QR, symmetric eigensolvers, one-sided Jacobi SVD.

Every routine here has a line-for-line pure-Python twin in ``_fallback.py``;
the two must agree to rounding. Inputs are assumed validated (finite,
C-contiguous float64) by the wrappers in ``core.py``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, hypot

cnp.import_array()

DEF EPS = 2.220446049250313e-16


def qr_limited_pivot(double[:, ::1] a_in, double tol):
    """Householder QR processing columns in natural order.

    A column whose residual norm is <= ``tol`` is moved to the end and never
    pivoted on. ``tol < 0`` disables dropping. Returns ``(q, r, perm, k)``
    with ``a[:, perm] = q @ r``, ``r`` upper trapezoidal with a
    nonnegative leading diagonal.
    """
    cdef Py_ssize_t m = a_in.shape[0], n = a_in.shape[1]
    a_np = np.array(a_in, dtype=np.float64, order="C", copy=True)
    perm_np = np.arange(n, dtype=np.intp)
    vs_np = np.zeros((min(m, n), m), dtype=np.float64)
    cdef double[:, ::1] a = a_np
    cdef double[:, ::1] vs = vs_np
    cdef Py_ssize_t[::1] perm = perm_np
    cdef Py_ssize_t k = 0, active = n, i, j, c
    cdef double norm2, alpha, x0, vnorm2, dot, tmp
    cdef Py_ssize_t ptmp

    while k < m and k < active:
        norm2 = 0.0
        for i in range(k, m):
            norm2 += a[i, k] * a[i, k]
        if tol >= 0.0 and sqrt(norm2) <= tol:
            # rotate column k to the end of the active block
            for i in range(m):
                tmp = a[i, k]
                for c in range(k, active - 1):
                    a[i, c] = a[i, c + 1]
                a[i, active - 1] = tmp
            ptmp = perm[k]
            for c in range(k, active - 1):
                perm[c] = perm[c + 1]
            perm[active - 1] = ptmp
            active -= 1
            continue
        x0 = a[k, k]
        alpha = sqrt(norm2)
        if x0 > 0.0:
            alpha = -alpha
        vnorm2 = 0.0
        for i in range(k, m):
            vs[k, i] = a[i, k]
        vs[k, k] = x0 - alpha
        for i in range(k, m):
            vnorm2 += vs[k, i] * vs[k, i]
        if vnorm2 > 0.0:
            tmp = 1.0 / sqrt(vnorm2)
            for i in range(k, m):
                vs[k, i] *= tmp
            for c in range(k + 1, n):
                dot = 0.0
                for i in range(k, m):
                    dot += vs[k, i] * a[i, c]
                dot *= 2.0
                for i in range(k, m):
                    a[i, c] -= dot * vs[k, i]
        a[k, k] = alpha
        for i in range(k + 1, m):
            a[i, k] = 0.0
        k += 1

    q_np = np.zeros((m, k), dtype=np.float64)
    cdef double[:, ::1] q = q_np
    for j in range(k):
        q[j, j] = 1.0
    cdef Py_ssize_t s
    for s in range(k - 1, -1, -1):
        for c in range(s, k):
            dot = 0.0
            for i in range(s, m):
                dot += vs[s, i] * q[i, c]
            dot *= 2.0
            for i in range(s, m):
                q[i, c] -= dot * vs[s, i]

    r_np = np.zeros((k, n), dtype=np.float64)
    cdef double[:, ::1] r = r_np
    for j in range(k):
        for c in range(j, n):
            r[j, c] = a[j, c]
    for j in range(k):
        if r[j, j] < 0.0:
            for c in range(j, n):
                r[j, c] = -r[j, c]
            for i in range(m):
                q[i, j] = -q[i, j]
    return q_np, r_np, perm_np, k


def sym_eig_ql(double[:, ::1] a_in, int max_iter=60):
    """Householder tridiagonalisation followed by implicit QL with shifts.

    Returns unsorted ``(values, vectors)``; column ``j`` of ``vectors``
    pairs with ``values[j]``.
    """
    cdef Py_ssize_t n = a_in.shape[0], i, j, k, l, mm
    v_np = np.array(a_in, dtype=np.float64, order="C", copy=True)
    d_np = np.zeros(n, dtype=np.float64)
    e_np = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] V = v_np
    cdef double[::1] d = d_np
    cdef double[::1] e = e_np
    cdef double scale, h, f, g, hh, p, r, dl1, c, c2, c3, el1, s, s2, tst1
    cdef int it

    if n == 1:
        return np.array([a_in[0, 0]]), np.ones((1, 1))

    for j in range(n):
        d[j] = V[n - 1, j]
    for i in range(n - 1, 0, -1):
        scale = 0.0
        h = 0.0
        for k in range(i):
            scale += fabs(d[k])
        if scale == 0.0:
            e[i] = d[i - 1]
            for j in range(i):
                d[j] = V[i - 1, j]
                V[i, j] = 0.0
                V[j, i] = 0.0
        else:
            for k in range(i):
                d[k] /= scale
                h += d[k] * d[k]
            f = d[i - 1]
            g = sqrt(h)
            if f > 0:
                g = -g
            e[i] = scale * g
            h = h - f * g
            d[i - 1] = f - g
            for j in range(i):
                e[j] = 0.0
            for j in range(i):
                f = d[j]
                V[j, i] = f
                g = e[j] + V[j, j] * f
                for k in range(j + 1, i):
                    g += V[k, j] * d[k]
                    e[k] += V[k, j] * f
                e[j] = g
            f = 0.0
            for j in range(i):
                e[j] /= h
                f += e[j] * d[j]
            hh = f / (h + h)
            for j in range(i):
                e[j] -= hh * d[j]
            for j in range(i):
                f = d[j]
                g = e[j]
                for k in range(j, i):
                    V[k, j] -= f * e[k] + g * d[k]
                d[j] = V[i - 1, j]
                V[i, j] = 0.0
        d[i] = h

    for i in range(n - 1):
        V[n - 1, i] = V[i, i]
        V[i, i] = 1.0
        h = d[i + 1]
        if h != 0.0:
            for k in range(i + 1):
                d[k] = V[k, i + 1] / h
            for j in range(i + 1):
                g = 0.0
                for k in range(i + 1):
                    g += V[k, i + 1] * V[k, j]
                for k in range(i + 1):
                    V[k, j] -= g * d[k]
        for k in range(i + 1):
            V[k, i + 1] = 0.0
    for j in range(n):
        d[j] = V[n - 1, j]
        V[n - 1, j] = 0.0
    V[n - 1, n - 1] = 1.0
    e[0] = 0.0

    # QL rotations act on column pairs; work on the transpose so they touch contiguous rows
    vt_np = np.ascontiguousarray(v_np.T)
    cdef double[:, ::1] W = vt_np
    for i in range(1, n):
        e[i - 1] = e[i]
    e[n - 1] = 0.0
    f = 0.0
    tst1 = 0.0
    for l in range(n):
        tst1 = max(tst1, fabs(d[l]) + fabs(e[l]))
        mm = l
        while mm < n:
            if fabs(e[mm]) <= EPS * tst1:
                break
            mm += 1
        if mm > l:
            it = 0
            while True:
                it += 1
                if it > max_iter:
                    raise ArithmeticError("QL iteration failed to converge")
                g = d[l]
                p = (d[l + 1] - g) / (2.0 * e[l])
                r = hypot(p, 1.0)
                if p < 0:
                    r = -r
                d[l] = e[l] / (p + r)
                d[l + 1] = e[l] * (p + r)
                dl1 = d[l + 1]
                h = g - d[l]
                for i in range(l + 2, n):
                    d[i] -= h
                f += h
                p = d[mm]
                c = 1.0
                c2 = c
                c3 = c
                el1 = e[l + 1]
                s = 0.0
                s2 = 0.0
                for i in range(mm - 1, l - 1, -1):
                    c3 = c2
                    c2 = c
                    s2 = s
                    g = c * e[i]
                    h = c * p
                    r = hypot(p, e[i])
                    e[i + 1] = s * r
                    s = e[i] / r
                    c = p / r
                    p = c * d[i] - s * g
                    d[i + 1] = h + s * (c * g + s * d[i])
                    for k in range(n):
                        h = W[i + 1, k]
                        W[i + 1, k] = s * W[i, k] + c * h
                        W[i, k] = c * W[i, k] - s * h
                p = -s * s2 * c3 * el1 * e[l] / dl1
                e[l] = s * p
                d[l] = c * p
                if fabs(e[l]) <= EPS * tst1:
                    break
        d[l] = d[l] + f
        e[l] = 0.0
    return d_np, vt_np.T


def sym_eig_jacobi(double[:, ::1] a_in, double tol=1e-12, int max_sweeps=100):
    """Cyclic Jacobi rotations until off(A) < tol * ||diag(A)||."""
    cdef Py_ssize_t n = a_in.shape[0], p, q, i
    a_np = np.array(a_in, dtype=np.float64, order="C", copy=True)
    v_np = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] a = a_np
    cdef double[:, ::1] v = v_np
    cdef double off, diag, app, aqq, apq, theta, t, c, s, x, y
    cdef int sweep
    for sweep in range(max_sweeps + 1):
        off = 0.0
        diag = 0.0
        for p in range(n):
            diag += a[p, p] * a[p, p]
            for q in range(p + 1, n):
                off += 2.0 * a[p, q] * a[p, q]
        if off == 0.0 or sqrt(off) < tol * sqrt(diag):
            break
        if sweep == max_sweeps:
            raise ArithmeticError("Jacobi eigensolver failed to converge")
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for i in range(n):
                    x = a[i, p]
                    y = a[i, q]
                    a[i, p] = c * x - s * y
                    a[i, q] = s * x + c * y
                for i in range(n):
                    x = a[p, i]
                    y = a[q, i]
                    a[p, i] = c * x - s * y
                    a[q, i] = s * x + c * y
                a[p, q] = 0.0
                a[q, p] = 0.0
                for i in range(n):
                    x = v[i, p]
                    y = v[i, q]
                    v[i, p] = c * x - s * y
                    v[i, q] = s * x + c * y
    return np.diag(a_np).copy(), v_np


def svd_jacobi_rows(double[:, ::1] xt, double[:, ::1] vt, double tol=1e-15, int max_sweeps=80):
    """One-sided (Hestenes) Jacobi acting in place on the rows of ``xt``.

    Rotations applied to rows of ``xt`` are mirrored on the rows of ``vt``;
    on exit the rows of ``xt`` are mutually orthogonal. Returns the number of
    sweeps performed.
    """
    cdef Py_ssize_t n = xt.shape[0], m = xt.shape[1], p, q, i
    cdef Py_ssize_t nv = vt.shape[1]
    cdef double alpha, beta, gamma, zeta, t, c, s, x, y
    cdef int sweep, rotated
    for sweep in range(max_sweeps):
        rotated = 0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(m):
                    alpha += xt[p, i] * xt[p, i]
                    beta += xt[q, i] * xt[q, i]
                    gamma += xt[p, i] * xt[q, i]
                if gamma == 0.0 or fabs(gamma) <= tol * sqrt(alpha * beta):
                    continue
                rotated = 1
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0:
                    t = 1.0 / (zeta + sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for i in range(m):
                    x = xt[p, i]
                    y = xt[q, i]
                    xt[p, i] = c * x - s * y
                    xt[q, i] = s * x + c * y
                for i in range(nv):
                    x = vt[p, i]
                    y = vt[q, i]
                    vt[p, i] = c * x - s * y
                    vt[q, i] = s * x + c * y
        if not rotated:
            return sweep + 1
    raise ArithmeticError("one-sided Jacobi SVD failed to converge")
